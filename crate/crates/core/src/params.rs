//! Named parameter storage and the momentum SGD optimizer.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
}

/// Ordered collection of named trainable tensors.
///
/// Registration order is stable and defines the checkpoint order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            self.find(&name).is_none(),
            "parameter {name} registered twice"
        );
        self.params.push(Param { name, tensor });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].tensor
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    /// Replaces every tensor from `(name, tensor)` pairs, requiring the exact
    /// same names, order and shapes as the current registration.
    pub fn load(&mut self, entries: Vec<(String, Tensor)>) -> Result<()> {
        if entries.len() != self.params.len() {
            return Err(Error::invalid(
                "load",
                alloc::format!(
                    "expected {} parameters, found {}",
                    self.params.len(),
                    entries.len()
                ),
            ));
        }
        for (param, (name, tensor)) in self.params.iter().zip(&entries) {
            if &param.name != name {
                return Err(Error::invalid(
                    "load",
                    alloc::format!("expected parameter {}, found {name}", param.name),
                ));
            }
            if param.tensor.shape() != tensor.shape() {
                return Err(Error::shape("load", param.tensor.shape(), tensor.shape()));
            }
        }
        for (param, (_, tensor)) in self.params.iter_mut().zip(entries) {
            param.tensor = tensor;
        }
        Ok(())
    }

    pub fn to_entries(&self) -> Vec<(String, Tensor)> {
        self.params
            .iter()
            .map(|p| (p.name.to_string(), p.tensor.clone()))
            .collect()
    }
}

/// Per-parameter gradient accumulator aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradBuffer {
    grads: Vec<Vec<f32>>,
}

impl GradBuffer {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            grads: store.params.iter().map(|p| vec![0.0; p.tensor.numel()]).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &[f32] {
        &self.grads[id.0]
    }

    pub fn add(&mut self, id: ParamId, grad: &[f32], scale: f32) {
        for (acc, g) in self.grads[id.0].iter_mut().zip(grad) {
            *acc += scale * g;
        }
    }

    /// Adds another buffer element-wise.
    pub fn merge(&mut self, other: &GradBuffer, scale: f32) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }
}

/// Stochastic gradient descent with heavy-ball momentum and L2 weight decay:
/// `v ← m·v + g + wd·θ`, `θ ← θ − lr·v`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub lr: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    velocity: Vec<Vec<f32>>,
}

impl Sgd {
    pub fn new(store: &ParamStore, lr: f32, momentum: f32, weight_decay: f32) -> Self {
        Self {
            lr,
            momentum,
            weight_decay,
            velocity: store.params.iter().map(|p| vec![0.0; p.tensor.numel()]).collect(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &GradBuffer) {
        for ((param, vel), grad) in store
            .params
            .iter_mut()
            .zip(&mut self.velocity)
            .zip(&grads.grads)
        {
            for ((theta, v), g) in param.tensor.data_mut().iter_mut().zip(vel.iter_mut()).zip(grad) {
                *v = self.momentum * *v + g + self.weight_decay * *theta;
                *theta -= self.lr * *v;
            }
        }
    }

    pub fn velocity(&self, id: ParamId) -> &[f32] {
        &self.velocity[id.0]
    }
}

/// Zero-mean normal initialization with standard deviation `std`.
pub fn normal_tensor<R: Rng + ?Sized>(shape: &[usize], std: f32, rng: &mut R) -> Tensor {
    let dist = Normal::new(0.0f32, std).expect("finite std");
    Tensor::from_fn(shape, |_| dist.sample(rng))
}

/// He-normal initialization for a layer with `fan_in` inputs feeding a relu.
pub fn kaiming_tensor<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    normal_tensor(shape, libm::sqrtf(2.0 / fan_in as f32), rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_matches_scalar_formula() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::scalar(2.0));
        let mut sgd = Sgd::new(&store, 0.1, 0.9, 0.01);
        let mut grads = GradBuffer::zeros_like(&store);
        grads.add(id, &[0.5], 1.0);

        // Independent scalar replay of the update rule.
        let (mut theta, mut v) = (2.0f64, 0.0f64);
        for _ in 0..3 {
            sgd.step(&mut store, &grads);
            v = 0.9 * v + 0.5 + 0.01 * theta;
            theta -= 0.1 * v;
            assert!((store.get(id).data()[0] as f64 - theta).abs() < 1e-6);
            assert!((sgd.velocity(id)[0] as f64 - v).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_lr_leaves_parameters() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::from_fn(&[3], |i| i as f32));
        let before = store.clone();
        let mut sgd = Sgd::new(&store, 0.0, 0.9, 1e-4);
        let mut grads = GradBuffer::zeros_like(&store);
        grads.add(id, &[1.0, -1.0, 3.0], 1.0);
        sgd.step(&mut store, &grads);
        assert_eq!(store, before);
    }

    #[test]
    fn load_rejects_mismatched_layout() {
        let mut store = ParamStore::new();
        store.add("a", Tensor::zeros(&[2]));
        let bad_name = alloc::vec![("b".into(), Tensor::zeros(&[2]))];
        assert!(store.load(bad_name).is_err());
        let bad_shape = alloc::vec![("a".into(), Tensor::zeros(&[3]))];
        assert!(store.load(bad_shape).is_err());
        let ok = alloc::vec![("a".into(), Tensor::full(&[2], 1.5))];
        store.load(ok).unwrap();
        assert_eq!(store.get(ParamId(0)).data(), &[1.5, 1.5]);
    }
}
