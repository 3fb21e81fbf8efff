use std::collections::BTreeMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{ParameterStore, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        }
    }

    pub fn default_learning_rate(self) -> f64 {
        match self {
            OptimizerKind::Sgd => 1e-2,
            OptimizerKind::Adam => 1e-3,
        }
    }
}

impl FromStr for OptimizerKind {
    type Err = TensorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sgd" => Ok(Self::Sgd),
            "adam" => Ok(Self::Adam),
            _ => Err(TensorError::Registry {
                kind: "optimizer",
                name: s.to_string(),
                available: vec!["sgd".into(), "adam".into()],
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl OptimizerConfig {
    pub fn sgd(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            learning_rate,
            ..Self::adam(learning_rate)
        }
    }

    pub fn adam(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<(), TensorError> {
        let ok = self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(TensorError::Contract(format!(
                "invalid optimizer hyperparameters {self:?}"
            )))
        }
    }
}

/// Mutable optimizer state: step counter plus Adam moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: OptimizerConfig,
    pub step_count: u64,
    first_moments: BTreeMap<String, Tensor>,
    second_moments: BTreeMap<String, Tensor>,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig) -> Result<Self, TensorError> {
        config.validate()?;
        Ok(Self {
            config,
            step_count: 0,
            first_moments: BTreeMap::new(),
            second_moments: BTreeMap::new(),
        })
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.config.learning_rate = lr;
    }

    pub fn first_moment(&self, name: &str) -> Option<&Tensor> {
        self.first_moments.get(name)
    }

    /// Applies one update to every trainable parameter.
    pub fn step(
        &mut self,
        params: &mut ParameterStore,
        grads: &BTreeMap<String, Tensor>,
    ) -> Result<(), TensorError> {
        for p in params.iter().filter(|p| p.trainable) {
            match grads.get(&p.name) {
                None => {
                    return Err(TensorError::Contract(format!(
                        "missing gradient for trainable parameter `{}`",
                        p.name
                    )))
                }
                Some(g) if g.dims() != p.tensor.dims() => {
                    return Err(TensorError::Shape {
                        op: "optimizer_step",
                        left: p.tensor.dims().to_vec(),
                        right: g.dims().to_vec(),
                    })
                }
                Some(_) => {}
            }
        }
        self.step_count += 1;
        let cfg = self.config;
        let t = self.step_count as i32;
        for p in params.iter_mut().filter(|p| p.trainable) {
            let g = &grads[&p.name];
            match cfg.kind {
                OptimizerKind::Sgd => {
                    for (w, gv) in p.tensor.data_mut().iter_mut().zip(g.data()) {
                        *w -= cfg.learning_rate * gv;
                    }
                }
                OptimizerKind::Adam => {
                    let dims = p.tensor.dims().to_vec();
                    let m = self
                        .first_moments
                        .entry(p.name.clone())
                        .or_insert_with(|| Tensor::zeros(&dims));
                    let v = self
                        .second_moments
                        .entry(p.name.clone())
                        .or_insert_with(|| Tensor::zeros(&dims));
                    let c1 = 1.0 - cfg.beta1.powi(t);
                    let c2 = 1.0 - cfg.beta2.powi(t);
                    for (((w, gv), mv), vv) in p
                        .tensor
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.data_mut())
                        .zip(v.data_mut())
                    {
                        *mv = cfg.beta1 * *mv + (1.0 - cfg.beta1) * gv;
                        *vv = cfg.beta2 * *vv + (1.0 - cfg.beta2) * gv * gv;
                        let m_hat = *mv / c1;
                        let v_hat = *vv / c2;
                        *w -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::autodiff::Parameter;

    fn store(w: f64) -> ParameterStore {
        let mut s = ParameterStore::new();
        s.insert(Parameter::new("w", Tensor::scalar(w)).unwrap()).unwrap();
        s
    }

    fn grads(g: f64) -> BTreeMap<String, Tensor> {
        BTreeMap::from([("w".to_string(), Tensor::scalar(g))])
    }

    #[test]
    fn sgd_update() {
        let mut p = store(1.0);
        let mut s = OptimizerState::new(OptimizerConfig::sgd(0.1)).unwrap();
        s.step(&mut p, &grads(0.5)).unwrap();
        assert!((p.get("w").unwrap().tensor.item() - 0.95).abs() < 1e-15);
        assert_eq!(s.step_count, 1);
        s.step(&mut p, &grads(0.0)).unwrap();
        assert!((p.get("w").unwrap().tensor.item() - 0.95).abs() < 1e-15);
        assert_eq!(s.step_count, 2);
    }

    #[test]
    fn missing_gradient_is_contract_error() {
        let mut p = store(1.0);
        let mut s = OptimizerState::new(OptimizerConfig::adam(0.1)).unwrap();
        assert!(matches!(
            s.step(&mut p, &BTreeMap::new()),
            Err(TensorError::Contract(_))
        ));
        assert_eq!(s.step_count, 0);
    }

    #[test]
    fn frozen_parameters_untouched() {
        let mut p = ParameterStore::new();
        let mut frozen = Parameter::new("f", Tensor::scalar(2.0)).unwrap();
        frozen.trainable = false;
        p.insert(frozen).unwrap();
        let mut s = OptimizerState::new(OptimizerConfig::sgd(0.1)).unwrap();
        s.step(&mut p, &BTreeMap::new()).unwrap();
        assert_eq!(p.get("f").unwrap().tensor.item(), 2.0);
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        assert!(OptimizerState::new(OptimizerConfig::adam(0.0)).is_err());
        let mut c = OptimizerConfig::adam(0.1);
        c.beta1 = 1.0;
        assert!(OptimizerState::new(c).is_err());
    }

    proptest! {
        #[test]
        fn step_is_deterministic(w in -5.0f64..5.0, gs in proptest::collection::vec(-1.0f64..1.0, 1..6)) {
            let run = || {
                let mut p = store(w);
                let mut s = OptimizerState::new(OptimizerConfig::adam(0.01)).unwrap();
                for &g in &gs {
                    s.step(&mut p, &grads(g)).unwrap();
                }
                (p.get("w").unwrap().tensor.item().to_bits(), s)
            };
            prop_assert_eq!(run(), run());
        }
    }
}
