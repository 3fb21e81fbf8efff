use serde_yaml::Value;

use super::{BuildContext, Forward, ModelError};
use crate::autodiff::{UnaryKind, Var};
use crate::config::Params;

/// Typed access to a component's merged hyperparameters.
pub struct HyperParams<'a> {
    owner: String,
    params: &'a Params,
}

impl<'a> HyperParams<'a> {
    pub fn new(owner: impl Into<String>, params: &'a Params) -> Self {
        Self {
            owner: owner.into(),
            params,
        }
    }

    fn bad(&self, key: &str, expected: &str) -> ModelError {
        ModelError::Config(format!("{}.{key}: expected {expected}", self.owner))
    }

    fn raw(&self, key: &str) -> Result<&'a Value, ModelError> {
        self.params
            .get(key)
            .ok_or_else(|| ModelError::Config(format!("{}.{key}: missing value", self.owner)))
    }

    pub fn positive(&self, key: &str) -> Result<usize, ModelError> {
        match self.raw(key)?.as_u64() {
            Some(v) if v > 0 => Ok(v as usize),
            _ => Err(self.bad(key, "a positive integer")),
        }
    }

    /// List of positive integers; may be empty.
    pub fn sizes(&self, key: &str) -> Result<Vec<usize>, ModelError> {
        let Some(seq) = self.raw(key)?.as_sequence() else {
            return Err(self.bad(key, "a list of positive integers"));
        };
        seq.iter()
            .map(|v| match v.as_u64() {
                Some(n) if n > 0 => Ok(n as usize),
                _ => Err(self.bad(key, "a list of positive integers")),
            })
            .collect()
    }

    pub fn string(&self, key: &str) -> Result<&'a str, ModelError> {
        self.raw(key)?.as_str().ok_or_else(|| self.bad(key, "a string"))
    }

    pub fn activation(&self, key: &str) -> Result<UnaryKind, ModelError> {
        self.string(key)?
            .parse()
            .map_err(|e| ModelError::Config(format!("{}.{key}: {e}", self.owner)))
    }
}

/// Fully connected layer parameters `w[in×out]` and `b[out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    weight: String,
    bias: String,
    pub out: usize,
}

impl Linear {
    pub fn build(ctx: &mut BuildContext, local: &str, input: usize, out: usize) -> Result<Self, ModelError> {
        Ok(Self {
            weight: ctx.glorot(&format!("{local}.weight"), &[input, out], input, out)?,
            bias: ctx.zeros(&format!("{local}.bias"), &[out])?,
            out,
        })
    }

    /// `x[n×in]` → `[n×out]`.
    pub fn apply(&self, f: &mut Forward, x: Var) -> Result<Var, ModelError> {
        let (w, b) = (f.param(&self.weight)?, f.param(&self.bias)?);
        let xw = f.tape.matmul(x, w)?;
        Ok(f.tape.add_bias(xw, b)?)
    }
}

/// Stack of fully connected layers, each followed by the activation.
#[derive(Debug, Clone)]
pub struct FcStack {
    layers: Vec<Linear>,
    activation: UnaryKind,
    width: usize,
}

impl FcStack {
    pub fn build(
        ctx: &mut BuildContext,
        local: &str,
        input: usize,
        sizes: &[usize],
        activation: UnaryKind,
    ) -> Result<Self, ModelError> {
        let mut layers = Vec::with_capacity(sizes.len());
        let mut width = input;
        for (i, &out) in sizes.iter().enumerate() {
            layers.push(Linear::build(ctx, &format!("{local}.{i}"), width, out)?);
            width = out;
        }
        Ok(Self {
            layers,
            activation,
            width,
        })
    }

    pub fn output_width(&self) -> usize {
        self.width
    }

    pub fn apply(&self, f: &mut Forward, mut x: Var) -> Result<Var, ModelError> {
        for layer in &self.layers {
            let z = layer.apply(f, x)?;
            x = f.tape.unary(self.activation, z)?;
        }
        Ok(x)
    }
}
