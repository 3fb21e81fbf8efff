use std::sync::Arc;

use serde_yaml::Value;

use super::layers::{FcStack, HyperParams, Linear};
use super::{expect_batch, ids_of, BuildContext, Decoded, Decoder, DecoderFactory, Forward, ModelError};
use crate::autodiff::{LossTarget, Tensor, UnaryKind, Var};
use crate::config::{ComponentEntry, Params, Registry, RegistryError};
use crate::features::FeatureType;

pub const TAGGER: &str = "tagger";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    SoftmaxCrossEntropy,
    SigmoidBce,
    Mse,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::SoftmaxCrossEntropy => "softmax_cross_entropy",
            LossKind::SigmoidBce => "sigmoid_bce",
            LossKind::Mse => "mse",
        }
    }

    /// Losses valid for an output type; the first is the default.
    pub fn for_type(ftype: FeatureType) -> &'static [LossKind] {
        match ftype {
            FeatureType::Category | FeatureType::Sequence => &[LossKind::SoftmaxCrossEntropy],
            FeatureType::Binary | FeatureType::Set => &[LossKind::SigmoidBce],
            FeatureType::Numerical => &[LossKind::Mse],
            FeatureType::Text | FeatureType::Vector => &[],
        }
    }

    pub fn default_for(ftype: FeatureType) -> Option<LossKind> {
        Self::for_type(ftype).first().copied()
    }
}

pub(super) fn register(reg: &mut Registry<ComponentEntry<DecoderFactory>>) -> Result<(), RegistryError> {
    use FeatureType::*;
    let defaults: Params = [
        ("fc_sizes".to_string(), Value::Sequence(Vec::new())),
        ("activation".to_string(), Value::from("relu")),
    ]
    .into_iter()
    .collect();
    for (t, name) in [
        (Category, "classifier"),
        (Set, "classifier"),
        (Binary, "regressor"),
        (Numerical, "regressor"),
        (Sequence, TAGGER),
    ] {
        let factory: DecoderFactory = Arc::new(|ctx, p| {
            let hp = HyperParams::new(format!("output_features.{}", ctx.feature), p);
            Ok(Box::new(Head::build(ctx, &hp)?) as Box<dyn Decoder>)
        });
        reg.register(Some(t), name, ComponentEntry::new(defaults.clone(), factory))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum HeadKind {
    /// Softmax over classes.
    Classes,
    /// Independent sigmoid per vocabulary entry.
    MultiLabel,
    /// One sigmoid logit.
    Binary,
    /// One real value.
    Real,
    /// Softmax over tags at every timestep, padding ignored in the loss.
    Tagger { pad: Option<usize> },
}

/// Every built-in decoder: an fc stack followed by a linear projection.
struct Head {
    kind: HeadKind,
    fc: FcStack,
    projection: Linear,
}

impl Head {
    fn build(ctx: &mut BuildContext, hp: &HyperParams) -> Result<Self, ModelError> {
        let meta = ctx.metadata()?;
        let ftype = meta.feature_type();
        let vocab_len = || {
            meta.vocab()
                .map(|v| v.len())
                .ok_or_else(|| ModelError::Contract(format!("`{}` has no vocabulary", ctx.feature)))
        };
        let (kind, classes) = match ftype {
            FeatureType::Category => (HeadKind::Classes, vocab_len()?),
            FeatureType::Set => (HeadKind::MultiLabel, vocab_len()?),
            FeatureType::Binary => (HeadKind::Binary, 1),
            FeatureType::Numerical => (HeadKind::Real, 1),
            FeatureType::Sequence => (
                HeadKind::Tagger {
                    pad: meta.vocab().and_then(|v| v.pad_id()),
                },
                vocab_len()?,
            ),
            other => {
                return Err(ModelError::Config(format!(
                    "output_features.{}: no decoder for {other} outputs",
                    ctx.feature
                )))
            }
        };
        let mut input = ctx.input_width();
        if let HeadKind::Tagger { .. } = kind {
            input += ctx.state_width.ok_or_else(|| {
                ModelError::Config(format!(
                    "output_features.{}: the tagger needs a sequence input feature",
                    ctx.feature
                ))
            })?;
        }
        let fc = FcStack::build(ctx, "fc", input, &hp.sizes("fc_sizes")?, hp.activation("activation")?)?;
        let projection = Linear::build(ctx, "projection", fc.output_width(), classes)?;
        Ok(Self { kind, fc, projection })
    }
}

impl Decoder for Head {
    fn hidden_width(&self) -> usize {
        self.fc.output_width()
    }

    fn probabilities_width(&self) -> usize {
        self.projection.out
    }

    fn uses_sequence_states(&self) -> bool {
        matches!(self.kind, HeadKind::Tagger { .. })
    }

    fn decode(&self, f: &mut Forward, input: Var, states: Option<Var>) -> Result<Decoded, ModelError> {
        if let HeadKind::Tagger { .. } = self.kind {
            let states = states.ok_or_else(|| ModelError::Contract("tagger called without sequence states".into()))?;
            let dims = f.value(states).dims().to_vec();
            let (b, s) = (dims[0], dims[1]);
            // every timestep also sees the combined representation
            let tiled = f.tape.stack(&vec![input; s], 1)?;
            let joined = f.tape.concat(&[states, tiled], 2)?;
            let width = f.value(joined).dims()[2];
            let flat = f.tape.reshape(joined, &[b * s, width])?;
            let hidden = self.fc.apply(f, flat)?;
            let flat_logits = self.projection.apply(f, hidden)?;
            let logits = f.tape.reshape(flat_logits, &[b, s, self.projection.out])?;
            let probabilities = f.tape.softmax(logits)?;
            return Ok(Decoded {
                logits,
                probabilities,
                last_hidden: hidden,
            });
        }
        let hidden = self.fc.apply(f, input)?;
        let logits = self.projection.apply(f, hidden)?;
        let probabilities = match self.kind {
            HeadKind::Classes => f.tape.softmax(logits)?,
            HeadKind::MultiLabel | HeadKind::Binary => f.tape.unary(UnaryKind::Sigmoid, logits)?,
            _ => logits,
        };
        Ok(Decoded {
            logits,
            probabilities,
            last_hidden: hidden,
        })
    }

    fn loss(&self, f: &mut Forward, decoded: &Decoded, target: &Tensor) -> Result<Var, ModelError> {
        let logits_dims = f.value(decoded.logits).dims().to_vec();
        let b = logits_dims[0];
        let what = "decoder target";
        let loss_target = match self.kind {
            HeadKind::Classes => {
                check_rows(expect_batch(target, 1, what)?, b)?;
                LossTarget::SoftmaxCrossEntropy {
                    ids: ids_of(target)?,
                    ignore: None,
                }
            }
            HeadKind::Tagger { pad } => {
                check_rows(expect_batch(target, logits_dims[1], what)?, b)?;
                LossTarget::SoftmaxCrossEntropy {
                    ids: ids_of(target)?,
                    ignore: pad,
                }
            }
            HeadKind::MultiLabel | HeadKind::Binary => {
                check_rows(expect_batch(target, self.projection.out, what)?, b)?;
                LossTarget::SigmoidBce {
                    targets: target.data().to_vec(),
                }
            }
            HeadKind::Real => {
                check_rows(expect_batch(target, 1, what)?, b)?;
                LossTarget::Mse {
                    targets: target.data().to_vec(),
                }
            }
        };
        // Loss is taken on logits; the sigmoid and softmax are folded in.
        let pred = if self.kind == HeadKind::Real {
            decoded.probabilities
        } else {
            decoded.logits
        };
        Ok(f.tape.loss(pred, loss_target)?)
    }
}

fn check_rows(target_rows: usize, batch: usize) -> Result<(), ModelError> {
    if target_rows == batch {
        Ok(())
    } else {
        Err(ModelError::Contract(format!(
            "target has {target_rows} rows for a batch of {batch}"
        )))
    }
}
