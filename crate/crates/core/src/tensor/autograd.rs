use std::collections::{HashMap, HashSet};

use super::{with_grad_mode, Element, Tensor};
use crate::error::{Error, Result};

/// Vector-Jacobian product of one recorded op.
///
/// Implementations must build their results from differentiable tensor ops
/// so that higher-order gradients work when the graph is recorded.
pub(crate) trait Backward<T: Element> {
    fn name(&self) -> &'static str;

    /// `needs[i]` is false when input `i` does not lead to any requested
    /// gradient; the op may return `None` for it.
    fn backward(
        &self,
        grad: &Tensor<T>,
        inputs: &[Tensor<T>],
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>>;
}

/// Post-order over the tracked subgraph feeding `root`, plus the set of node
/// ids from which one of `targets` is reachable.
fn walk<T: Element>(root: &Tensor<T>, targets: &HashSet<u64>) -> (Vec<Tensor<T>>, HashSet<u64>) {
    let mut order = Vec::new();
    let mut reaches = HashSet::new();
    let mut seen = HashSet::new();
    let mut stack = vec![(root.clone(), false)];
    while let Some((t, expanded)) = stack.pop() {
        if expanded {
            let hit = targets.contains(&t.id())
                || t.grad_fn()
                    .is_some_and(|g| g.inputs.iter().any(|i| reaches.contains(&i.id())));
            if hit {
                reaches.insert(t.id());
            }
            order.push(t);
            continue;
        }
        if !seen.insert(t.id()) {
            continue;
        }
        stack.push((t.clone(), true));
        if let Some(g) = t.grad_fn() {
            for input in g.inputs.iter().rev() {
                if input.requires_grad() && !seen.contains(&input.id()) {
                    stack.push((input.clone(), false));
                }
            }
        }
    }
    (order, reaches)
}

/// Gradients of the scalar `loss` with respect to each tensor in `wrt`.
///
/// With `create_graph` the returned gradients carry their own graph and can
/// be differentiated again; otherwise they are constants. Tensors that the
/// loss does not depend on receive zeros.
pub fn backward<T: Element>(
    loss: &Tensor<T>,
    wrt: &[&Tensor<T>],
    create_graph: bool,
) -> Result<Vec<Tensor<T>>> {
    if loss.numel() != 1 {
        return Err(Error::shape(
            "backward",
            format!("loss must be a scalar, got shape {:?}", loss.shape()),
        ));
    }
    let targets: HashSet<u64> = wrt.iter().map(|t| t.id()).collect();
    let mut grads: HashMap<u64, Tensor<T>> = HashMap::new();

    if loss.requires_grad() {
        let (order, reaches) = walk(loss, &targets);
        with_grad_mode(create_graph, || -> Result<()> {
            grads.insert(loss.id(), Tensor::ones(loss.shape()));
            for node in order.iter().rev() {
                if !reaches.contains(&node.id()) {
                    continue;
                }
                let Some(gf) = node.grad_fn() else { continue };
                let grad = if targets.contains(&node.id()) {
                    grads.get(&node.id()).cloned()
                } else {
                    grads.remove(&node.id())
                };
                let Some(grad) = grad else { continue };
                let needs: Vec<bool> = gf
                    .inputs
                    .iter()
                    .map(|i| i.requires_grad() && reaches.contains(&i.id()))
                    .collect();
                if !needs.iter().any(|&n| n) {
                    continue;
                }
                let input_grads = gf.op.backward(&grad, &gf.inputs, &needs)?;
                for ((input, g), need) in gf.inputs.iter().zip(input_grads).zip(&needs) {
                    let (Some(g), true) = (g, *need) else { continue };
                    if g.shape() != input.shape() {
                        return Err(Error::shape(
                            "backward",
                            format!(
                                "{} produced gradient {:?} for input {:?}",
                                gf.op.name(),
                                g.shape(),
                                input.shape()
                            ),
                        ));
                    }
                    let acc = match grads.remove(&input.id()) {
                        Some(prev) => prev.add(&g)?,
                        None => g,
                    };
                    grads.insert(input.id(), acc);
                }
            }
            Ok(())
        })?;
    }

    Ok(wrt
        .iter()
        .map(|t| {
            grads
                .get(&t.id())
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.shape()))
        })
        .collect())
}
