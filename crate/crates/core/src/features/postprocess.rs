use serde::{Deserialize, Serialize};

use super::metadata::{FeatureMetadata, PAD, UNK};
use super::{FeatureError, FeatureType};
use crate::autodiff::Tensor;

/// A prediction mapped back to raw data space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub value: String,
    /// Per-class probabilities (category, set) or the positive-class
    /// probability (binary); empty for other types.
    pub probabilities: Vec<(String, f64)>,
}

impl Prediction {
    pub fn from_value(value: impl Into<String>) -> Self {
        Self {
            value: value.into(),
            probabilities: Vec::new(),
        }
    }
}

/// Index of the largest value; the lowest index wins ties.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn check_dims(out: &Tensor, expected: Vec<usize>) -> Result<(), FeatureError> {
    if out.dims() == expected.as_slice() {
        Ok(())
    } else {
        Err(FeatureError::Shape {
            expected,
            actual: out.dims().to_vec(),
        })
    }
}

/// Maps one row of decoder output back to a raw prediction.
///
/// Expected tensors: binary `[1]` probability, numerical `[1]` normalized
/// value, category `[c]` and set `[|V|]` probabilities, sequence `[s×c]`
/// per-position probabilities, vector `[n]` values.
pub fn postprocess_prediction(
    out: &Tensor,
    ftype: FeatureType,
    meta: &FeatureMetadata,
) -> Result<Prediction, FeatureError> {
    if meta.feature_type() != ftype {
        return Err(FeatureError::Contract(format!(
            "metadata of type {} used for a {ftype} feature",
            meta.feature_type()
        )));
    }
    match meta {
        FeatureMetadata::Binary {
            true_form,
            false_form,
        } => {
            check_dims(out, vec![1])?;
            let p = out.item();
            let value = if p >= 0.5 { true_form } else { false_form };
            Ok(Prediction {
                value: value.clone(),
                probabilities: vec![(true_form.clone(), p)],
            })
        }
        FeatureMetadata::Numerical { .. } => {
            check_dims(out, vec![1])?;
            Ok(Prediction::from_value(meta.denormalize(out.item()).to_string()))
        }
        FeatureMetadata::Category(vocab) => {
            check_dims(out, vec![vocab.len()])?;
            Ok(Prediction {
                value: vocab.id_to_token[argmax(out.data())].clone(),
                probabilities: vocab.id_to_token.iter().cloned().zip(out.data().iter().copied()).collect(),
            })
        }
        FeatureMetadata::Set(vocab) => {
            check_dims(out, vec![vocab.len()])?;
            let tokens: Vec<&str> = vocab
                .id_to_token
                .iter()
                .zip(out.data())
                .filter(|(t, &p)| p >= 0.5 && t.as_str() != UNK)
                .map(|(t, _)| t.as_str())
                .collect();
            Ok(Prediction {
                value: tokens.join(" "),
                probabilities: vocab.id_to_token.iter().cloned().zip(out.data().iter().copied()).collect(),
            })
        }
        FeatureMetadata::Sequence(vocab) | FeatureMetadata::Text(vocab) => {
            if out.rank() != 2 || out.dims()[1] != vocab.len() {
                return Err(FeatureError::Shape {
                    expected: vec![vocab.max_sequence_length, vocab.len()],
                    actual: out.dims().to_vec(),
                });
            }
            let mut tokens: Vec<&str> = (0..out.dims()[0])
                .map(|t| vocab.id_to_token[argmax(out.row(t))].as_str())
                .collect();
            while tokens.last() == Some(&PAD) {
                tokens.pop();
            }
            Ok(Prediction::from_value(tokens.join(" ")))
        }
        FeatureMetadata::Vector { vector_size } => {
            check_dims(out, vec![*vector_size])?;
            let parts: Vec<String> = out.data().iter().map(f64::to_string).collect();
            Ok(Prediction::from_value(parts.join(" ")))
        }
    }
}
