//! Named parameter storage and the Adam optimizer.

use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};

use crate::error::{Error, Result};
use crate::tensor::{backward, Element, Tensor};

/// Gradient per parameter path.
pub type GradMap<T> = BTreeMap<String, Tensor<T>>;

/// A trainable tensor with its Adam moments.
#[derive(Clone, Debug)]
pub struct Param<T: Element> {
    pub value: Tensor<T>,
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
}

#[derive(Clone, Debug, Default)]
pub struct ParamSet<T: Element> {
    entries: BTreeMap<String, Param<T>>,
}

impl<T: Element> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet {
            entries: BTreeMap::new(),
        }
    }

    /// Registers a fresh parameter with zeroed optimizer state.
    pub fn insert(&mut self, path: impl Into<String>, value: Tensor<T>) -> Result<()> {
        let path = path.into();
        if self.entries.contains_key(&path) {
            return Err(Error::InvalidArgument(format!("duplicate parameter path {path}")));
        }
        let n = value.numel();
        self.entries.insert(
            path,
            Param {
                value: value.requires_grad_(),
                m: vec![T::zero(); n],
                v: vec![T::zero(); n],
                step: 0,
            },
        );
        Ok(())
    }

    pub(crate) fn insert_state(&mut self, path: String, param: Param<T>) -> Result<()> {
        let n = param.value.numel();
        if param.m.len() != n || param.v.len() != n {
            return Err(Error::Checkpoint(format!(
                "optimizer state of {path} does not match its {n} values"
            )));
        }
        let param = Param {
            value: param.value.requires_grad_(),
            ..param
        };
        if self.entries.insert(path.clone(), param).is_some() {
            return Err(Error::Checkpoint(format!("duplicate parameter path {path}")));
        }
        Ok(())
    }

    pub fn get(&self, path: &str) -> Result<&Tensor<T>> {
        self.entries
            .get(path)
            .map(|p| &p.value)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter {path}")))
    }

    /// Swaps in a new value of the same shape, keeping optimizer state.
    pub fn replace(&mut self, path: &str, value: Tensor<T>) -> Result<()> {
        let p = self
            .entries
            .get_mut(path)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter {path}")))?;
        if p.value.shape() != value.shape() {
            return Err(Error::shape(
                "ParamSet::replace",
                format!("{path}: {:?} vs {:?}", value.shape(), p.value.shape()),
            ));
        }
        p.value = value.detach().requires_grad_();
        Ok(())
    }

    pub fn param(&self, path: &str) -> Option<&Param<T>> {
        self.entries.get(path)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn num_values(&self) -> usize {
        self.entries.values().map(|p| p.value.numel()).sum()
    }

    /// Gradient of `loss` with respect to every parameter.
    pub fn grads(&self, loss: &Tensor<T>, create_graph: bool) -> Result<GradMap<T>> {
        let tensors: Vec<&Tensor<T>> = self.entries.values().map(|p| &p.value).collect();
        let grads = backward(loss, &tensors, create_graph)?;
        Ok(self.entries.keys().cloned().zip(grads).collect())
    }

    /// Hash over parameter paths and value bits.
    pub fn fingerprint(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for (path, p) in &self.entries {
            path.hash(&mut h);
            for v in p.value.data() {
                v.as_f64().to_bits().hash(&mut h);
            }
        }
        h.finish()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of every parameter present in `grads`.
///
/// All gradients are validated before any parameter changes.
pub fn adam_step<T: Element>(
    params: &mut ParamSet<T>,
    grads: &GradMap<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    for (path, g) in grads {
        let p = params
            .entries
            .get(path)
            .ok_or_else(|| Error::InvalidArgument(format!("gradient for unknown parameter {path}")))?;
        if g.shape() != p.value.shape() {
            return Err(Error::shape(
                "adam_step",
                format!("{path}: gradient {:?} vs parameter {:?}", g.shape(), p.value.shape()),
            ));
        }
    }
    for (path, g) in grads {
        let p = params.entries.get_mut(path).expect("validated above");
        p.step += 1;
        let t = p.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let mut next = Vec::with_capacity(g.numel());
        for (i, (&gi, &theta)) in g.data().iter().zip(p.value.data()).enumerate() {
            let gi = gi.as_f64();
            let m = cfg.beta1 * p.m[i].as_f64() + (1.0 - cfg.beta1) * gi;
            let v = cfg.beta2 * p.v[i].as_f64() + (1.0 - cfg.beta2) * gi * gi;
            p.m[i] = T::from_f64(m);
            p.v[i] = T::from_f64(v);
            let update = cfg.lr * (m / bc1) / ((v / bc2).sqrt() + cfg.eps);
            next.push(T::from_f64(theta.as_f64() - update));
        }
        p.value = Tensor::variable(next, p.value.shape())?;
    }
    Ok(())
}
