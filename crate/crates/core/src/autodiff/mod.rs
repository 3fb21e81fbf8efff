//! Dense `f64` tensors, a reverse-mode tape, and the SGD/Adam optimizers.

pub mod ops;
mod optim;
mod tape;
mod tensor;

use std::collections::BTreeMap;

use rand::{RngExt, SeedableRng};
use thiserror::Error;

pub use ops::{LossTarget, ReduceKind, UnaryKind};
pub use optim::{OptimizerConfig, OptimizerKind, OptimizerState};
pub use tape::{Gradients, Op, Tape, TapeNode, Var};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: index {index} out of range for extent {extent}")]
    Index {
        op: &'static str,
        index: usize,
        extent: usize,
    },
    #[error("unknown {kind} `{name}`; available: {}", available.join(", "))]
    Registry {
        kind: &'static str,
        name: String,
        available: Vec<String>,
    },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("{0}")]
    Contract(String),
}

/// Seeded generator that owns all randomness of a model build or run.
pub type ModelRng = rand_pcg::Pcg64;

pub fn seeded_rng(seed: u64) -> ModelRng {
    ModelRng::seed_from_u64(seed)
}

/// Glorot-uniform initialization in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform(dims: &[usize], fan_in: usize, fan_out: usize, rng: &mut ModelRng) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = dims.iter().product();
    let data = (0..n).map(|_| rng.random_range(-limit..=limit)).collect();
    Tensor::from_parts(dims.to_vec(), data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
    pub trainable: bool,
}

impl Parameter {
    pub fn new(name: impl Into<String>, tensor: Tensor) -> Result<Self, TensorError> {
        let name = name.into();
        if name.is_empty() || name.split('.').any(str::is_empty) {
            return Err(TensorError::Contract(format!(
                "parameter name `{name}` must be a dot-separated non-empty path"
            )));
        }
        Ok(Self {
            name,
            tensor,
            trainable: true,
        })
    }
}

/// Named parameters of a model, iterated in name order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterStore {
    params: BTreeMap<String, Parameter>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, p: Parameter) -> Result<(), TensorError> {
        if self.params.contains_key(&p.name) {
            return Err(TensorError::Contract(format!(
                "duplicate parameter name `{}`",
                p.name
            )));
        }
        self.params.insert(p.name.clone(), p);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Parameter> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Parameter> {
        self.params.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.values()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.values_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_names_are_paths() {
        assert!(Parameter::new("encoders.title.embedding", Tensor::scalar(0.0)).is_ok());
        assert!(Parameter::new("", Tensor::scalar(0.0)).is_err());
        assert!(Parameter::new("a..b", Tensor::scalar(0.0)).is_err());
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParameterStore::new();
        s.insert(Parameter::new("a.b", Tensor::scalar(0.0)).unwrap()).unwrap();
        assert!(s.insert(Parameter::new("a.b", Tensor::scalar(1.0)).unwrap()).is_err());
    }

    #[test]
    fn glorot_bounds_and_determinism() {
        let a = glorot_uniform(&[4, 6], 4, 6, &mut seeded_rng(7));
        let b = glorot_uniform(&[4, 6], 4, 6, &mut seeded_rng(7));
        assert_eq!(a, b);
        let limit = (6.0f64 / 10.0).sqrt();
        assert!(a.data().iter().all(|v| v.abs() <= limit));
    }
}
