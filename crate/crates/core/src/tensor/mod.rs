//! Dense `[N, C, H, W]` tensors with reverse-mode automatic differentiation.
//!
//! Every backward rule is written in terms of the same differentiable ops the
//! forward pass uses, so running [`backward`] with `create_graph = true`
//! produces gradients that can themselves be differentiated. The gradient
//! penalty of the critic objective depends on this.

mod autograd;
mod conv;
mod element;
mod nn_ops;
mod ops;

use std::cell::Cell;
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

pub use autograd::backward;
pub use element::{DType, Element};
pub use nn_ops::{
    apply_activation, batch_norm, dropout, lerp, lerp_per_sample, Activation, Mode, RunningStats,
};

pub(crate) use autograd::Backward;

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` with graph recording switched off on the current thread.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    with_grad_mode(false, f)
}

pub(crate) fn with_grad_mode<R>(enabled: bool, f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let prev = GRAD_ENABLED.with(|g| g.replace(enabled));
    let _restore = Restore(prev);
    f()
}

pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

pub(crate) struct GradFn<T: Element> {
    pub op: Box<dyn Backward<T>>,
    pub inputs: Vec<Tensor<T>>,
}

struct Node<T: Element> {
    id: u64,
    shape: Vec<usize>,
    data: Rc<[T]>,
    requires_grad: bool,
    grad_fn: Option<GradFn<T>>,
}

/// Reference-counted handle to an immutable node of the computation graph.
///
/// Cloning is cheap and shares the node.
pub struct Tensor<T: Element = f32> {
    node: Rc<Node<T>>,
}

impl<T: Element> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            node: Rc::clone(&self.node),
        }
    }
}

impl<T: Element> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<_> = self.data().iter().take(8).collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape())
            .field("dtype", &T::DTYPE)
            .field("requires_grad", &self.requires_grad())
            .field("op", &self.node.grad_fn.as_ref().map(|g| g.op.name()))
            .field("data", &preview)
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Element> Tensor<T> {
    fn from_parts(
        shape: Vec<usize>,
        data: Rc<[T]>,
        requires_grad: bool,
        grad_fn: Option<GradFn<T>>,
    ) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor {
            node: Rc::new(Node {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data,
                requires_grad,
                grad_fn,
            }),
        }
    }

    /// Constant tensor. Fails when `data.len()` disagrees with `shape`.
    pub fn new(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(Error::shape(
                "new",
                format!("shape {:?} needs {} values, got {}", shape, numel(shape), data.len()),
            ));
        }
        Ok(Self::from_parts(shape.to_vec(), data.into(), false, None))
    }

    /// Leaf tensor that participates in gradient computation.
    pub fn variable(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        let t = Self::new(data, shape)?;
        Ok(t.requires_grad_())
    }

    pub fn from_f64(data: &[f64], shape: &[usize]) -> Result<Self> {
        Self::new(data.iter().map(|&v| T::from_f64(v)).collect(), shape)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let v = T::from_f64(value);
        Self::from_parts(shape.to_vec(), vec![v; numel(shape)].into(), false, None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn scalar(value: f64) -> Self {
        Self::full(&[], value)
    }

    /// New leaf sharing this tensor's data, with gradient tracking on.
    pub fn requires_grad_(&self) -> Self {
        Self::from_parts(self.node.shape.clone(), Rc::clone(&self.node.data), true, None)
    }

    /// New constant leaf sharing this tensor's data.
    pub fn detach(&self) -> Self {
        Self::from_parts(self.node.shape.clone(), Rc::clone(&self.node.data), false, None)
    }

    /// Output of a differentiable op. Records the graph edge only when grad
    /// mode is on and some input tracks gradients.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<T>,
        op: impl Backward<T> + 'static,
        inputs: Vec<Tensor<T>>,
    ) -> Self {
        let track = is_grad_enabled() && inputs.iter().any(|t| t.requires_grad());
        let grad_fn = track.then(|| GradFn {
            op: Box::new(op),
            inputs,
        });
        Self::from_parts(shape, data.into(), track, grad_fn)
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn data(&self) -> &[T] {
        &self.node.data
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.node.data.to_vec()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.node.data.iter().map(|v| v.as_f64()).collect()
    }

    pub fn numel(&self) -> usize {
        self.node.data.len()
    }

    pub fn rank(&self) -> usize {
        self.node.shape.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.node.grad_fn.is_none()
    }

    pub(crate) fn id(&self) -> u64 {
        self.node.id
    }

    pub(crate) fn grad_fn(&self) -> Option<&GradFn<T>> {
        self.node.grad_fn.as_ref()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.numel() != 1 {
            return Err(Error::shape(
                "item",
                format!("expected one element, shape is {:?}", self.shape()),
            ));
        }
        Ok(self.node.data[0])
    }

    pub fn ptr_eq(&self, other: &Self) -> bool {
        Rc::ptr_eq(&self.node, &other.node)
    }
}
