use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::preprocess::{cell_tokens, is_missing, parse_binary, parse_number, parse_vector};
use super::{FeatureError, FeatureType, Normalization, PreprocParams};

pub const PAD: &str = "<PAD>";
pub const UNK: &str = "<UNK>";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabMetadata {
    pub id_to_token: Vec<String>,
    pub token_to_id: BTreeMap<String, usize>,
    pub token_counts: BTreeMap<String, u64>,
    pub max_sequence_length: usize,
}

impl VocabMetadata {
    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn unk_id(&self) -> usize {
        self.token_to_id[UNK]
    }

    pub fn pad_id(&self) -> Option<usize> {
        self.token_to_id.get(PAD).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> usize {
        self.token_to_id
            .get(token)
            .copied()
            .unwrap_or_else(|| self.unk_id())
    }
}

/// Training-time statistics needed to preprocess identically later.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FeatureMetadata {
    Binary {
        true_form: String,
        false_form: String,
    },
    Numerical {
        mean: f64,
        std: f64,
        min: f64,
        max: f64,
        normalization: Normalization,
    },
    Category(VocabMetadata),
    Set(VocabMetadata),
    Sequence(VocabMetadata),
    Text(VocabMetadata),
    Vector {
        vector_size: usize,
    },
}

impl FeatureMetadata {
    pub fn feature_type(&self) -> FeatureType {
        match self {
            FeatureMetadata::Binary { .. } => FeatureType::Binary,
            FeatureMetadata::Numerical { .. } => FeatureType::Numerical,
            FeatureMetadata::Category(_) => FeatureType::Category,
            FeatureMetadata::Set(_) => FeatureType::Set,
            FeatureMetadata::Sequence(_) => FeatureType::Sequence,
            FeatureMetadata::Text(_) => FeatureType::Text,
            FeatureMetadata::Vector { .. } => FeatureType::Vector,
        }
    }

    pub fn vocab(&self) -> Option<&VocabMetadata> {
        match self {
            FeatureMetadata::Category(v)
            | FeatureMetadata::Set(v)
            | FeatureMetadata::Sequence(v)
            | FeatureMetadata::Text(v) => Some(v),
            _ => None,
        }
    }

    pub fn vocab_mut(&mut self) -> Option<&mut VocabMetadata> {
        match self {
            FeatureMetadata::Category(v)
            | FeatureMetadata::Set(v)
            | FeatureMetadata::Sequence(v)
            | FeatureMetadata::Text(v) => Some(v),
            _ => None,
        }
    }

    /// Normalizes a raw numerical value; identity for other types.
    pub fn normalize(&self, x: f64) -> f64 {
        match *self {
            FeatureMetadata::Numerical {
                mean,
                std,
                min,
                max,
                normalization,
            } => match normalization {
                Normalization::Zscore => (x - mean) / std,
                Normalization::Minmax => (x - min) / range(min, max),
                Normalization::None => x,
            },
            _ => x,
        }
    }

    pub fn denormalize(&self, y: f64) -> f64 {
        match *self {
            FeatureMetadata::Numerical {
                mean,
                std,
                min,
                max,
                normalization,
            } => match normalization {
                Normalization::Zscore => y * std + mean,
                Normalization::Minmax => y * range(min, max) + min,
                Normalization::None => y,
            },
            _ => y,
        }
    }

    /// Width of the tensor produced by preprocessing one value.
    pub fn tensor_width(&self) -> usize {
        match self {
            FeatureMetadata::Binary { .. }
            | FeatureMetadata::Numerical { .. }
            | FeatureMetadata::Category(_) => 1,
            FeatureMetadata::Set(v) => v.len(),
            FeatureMetadata::Sequence(v) | FeatureMetadata::Text(v) => v.max_sequence_length,
            FeatureMetadata::Vector { vector_size } => *vector_size,
        }
    }
}

fn range(min: f64, max: f64) -> f64 {
    if max > min {
        max - min
    } else {
        1.0
    }
}

fn most_frequent(counts: &HashMap<String, u64>) -> Option<String> {
    counts
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
        .map(|(k, _)| k.clone())
}

/// Collects the metadata of one training column.
pub fn build_metadata(
    column: &[String],
    ftype: FeatureType,
    params: &PreprocParams,
) -> Result<FeatureMetadata, FeatureError> {
    let present: Vec<(usize, &str)> = column
        .iter()
        .enumerate()
        .filter(|(_, v)| !is_missing(v))
        .map(|(i, v)| (i, v.as_str()))
        .collect();
    if present.is_empty() && ftype != FeatureType::Binary {
        return Err(FeatureError::Metadata(format!(
            "all {} values of the {ftype} column are missing",
            column.len()
        )));
    }
    let row_ctx = |i: usize| format!("row {}", i + 1);

    match ftype {
        FeatureType::Binary => {
            let mut trues = HashMap::new();
            let mut falses = HashMap::new();
            for &(i, v) in &present {
                let form = v.trim().to_string();
                let bucket = if parse_binary(v).map_err(|e| e.with_context(row_ctx(i)))? {
                    &mut trues
                } else {
                    &mut falses
                };
                *bucket.entry(form).or_insert(0u64) += 1;
            }
            Ok(FeatureMetadata::Binary {
                true_form: most_frequent(&trues).unwrap_or_else(|| "true".into()),
                false_form: most_frequent(&falses).unwrap_or_else(|| "false".into()),
            })
        }
        FeatureType::Numerical => {
            let values = present
                .iter()
                .map(|&(i, v)| parse_number(v).map_err(|e| e.with_context(row_ctx(i))))
                .collect::<Result<Vec<f64>, _>>()?;
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let std = if var > 0.0 { var.sqrt() } else { 1.0 };
            let min = values.iter().copied().fold(f64::INFINITY, f64::min);
            let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            Ok(FeatureMetadata::Numerical {
                mean,
                std,
                min,
                max,
                normalization: params.normalization,
            })
        }
        FeatureType::Vector => {
            let mut size = None;
            for &(i, v) in &present {
                let n = parse_vector(v).map_err(|e| e.with_context(row_ctx(i)))?.len();
                match size {
                    None if n == 0 => {
                        return Err(FeatureError::value("empty vector").with_context(row_ctx(i)))
                    }
                    None => size = Some(n),
                    Some(s) if s != n => {
                        return Err(FeatureError::value(format!(
                            "vector has {n} values, expected {s}"
                        ))
                        .with_context(row_ctx(i)))
                    }
                    Some(_) => {}
                }
            }
            Ok(FeatureMetadata::Vector {
                vector_size: size.expect("at least one present value"),
            })
        }
        FeatureType::Category | FeatureType::Set | FeatureType::Sequence | FeatureType::Text => {
            let mut counts: HashMap<String, u64> = HashMap::new();
            let mut longest = 0;
            for &(_, v) in &present {
                let tokens = cell_tokens(v, ftype, params);
                longest = longest.max(tokens.len());
                for t in tokens {
                    *counts.entry(t).or_insert(0) += 1;
                }
            }
            let reserved: &[&str] = if ftype.is_sequential() {
                &[PAD, UNK]
            } else {
                &[UNK]
            };
            for r in reserved {
                counts.remove(*r);
            }
            let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
            ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            ranked.truncate(params.vocab_size);

            let id_to_token: Vec<String> = reserved
                .iter()
                .map(|s| s.to_string())
                .chain(ranked.iter().map(|(t, _)| t.clone()))
                .collect();
            let token_to_id = id_to_token
                .iter()
                .enumerate()
                .map(|(i, t)| (t.clone(), i))
                .collect();
            let max_sequence_length = match ftype {
                FeatureType::Category => 1,
                FeatureType::Set => longest.max(1),
                _ => longest.clamp(1, params.max_sequence_length),
            };
            let vocab = VocabMetadata {
                id_to_token,
                token_to_id,
                token_counts: ranked.into_iter().collect(),
                max_sequence_length,
            };
            Ok(match ftype {
                FeatureType::Category => FeatureMetadata::Category(vocab),
                FeatureType::Set => FeatureMetadata::Set(vocab),
                FeatureType::Sequence => FeatureMetadata::Sequence(vocab),
                _ => FeatureMetadata::Text(vocab),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::preprocess_value;
    use proptest::prelude::*;

    fn col(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    /// Independent counting-and-sorting oracle for vocabularies.
    fn oracle_vocab(tokens: &[&str], reserved: &[&str], cap: usize) -> Vec<String> {
        let mut distinct: Vec<&str> = tokens.to_vec();
        distinct.sort();
        distinct.dedup();
        let mut scored: Vec<(usize, &str)> = distinct
            .iter()
            .map(|t| (tokens.iter().filter(|x| *x == t).count(), *t))
            .collect();
        // descending count, ascending token
        scored.sort_by(|a, b| (usize::MAX - a.0, a.1).cmp(&(usize::MAX - b.0, b.1)));
        reserved
            .iter()
            .map(|s| s.to_string())
            .chain(scored.into_iter().take(cap).map(|(_, t)| t.to_string()))
            .collect()
    }

    #[test]
    fn category_vocab_order() {
        let p = PreprocParams::defaults_for(FeatureType::Category);
        let m = build_metadata(&col(&["a", "b", "a"]), FeatureType::Category, &p).unwrap();
        assert_eq!(m.vocab().unwrap().id_to_token, [UNK, "a", "b"]);
        assert_eq!(
            m.vocab().unwrap().id_to_token,
            oracle_vocab(&["a", "b", "a"], &[UNK], 10)
        );
    }

    #[test]
    fn numerical_population_stats() {
        let p = PreprocParams::defaults_for(FeatureType::Numerical);
        let m = build_metadata(&col(&["1", "2", "3"]), FeatureType::Numerical, &p).unwrap();
        // two-pass oracle: mean 2, population variance 2/3
        let FeatureMetadata::Numerical { mean, std, .. } = m else { panic!() };
        assert!((mean - 2.0).abs() < 1e-15);
        assert!((std - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn constant_column_gets_unit_std() {
        let p = PreprocParams::defaults_for(FeatureType::Numerical);
        let m = build_metadata(&col(&["4", "4"]), FeatureType::Numerical, &p).unwrap();
        assert_eq!(m.normalize(4.0), 0.0);
        assert_eq!(m.denormalize(1.0), 5.0);
    }

    #[test]
    fn binary_records_forms_only() {
        let p = PreprocParams::defaults_for(FeatureType::Binary);
        let m = build_metadata(&col(&["yes", "no", "yes"]), FeatureType::Binary, &p).unwrap();
        assert_eq!(
            m,
            FeatureMetadata::Binary {
                true_form: "yes".into(),
                false_form: "no".into()
            }
        );
        assert!(m.vocab().is_none());
        let m = build_metadata(&[], FeatureType::Binary, &p).unwrap();
        assert!(matches!(m, FeatureMetadata::Binary { ref true_form, .. } if true_form == "true"));
    }

    #[test]
    fn all_missing_is_metadata_error() {
        let p = PreprocParams::defaults_for(FeatureType::Category);
        assert!(matches!(
            build_metadata(&col(&["", " "]), FeatureType::Category, &p),
            Err(FeatureError::Metadata(_))
        ));
    }

    #[test]
    fn sequence_reserves_pad_and_unk_and_caps() {
        let mut p = PreprocParams::defaults_for(FeatureType::Sequence);
        p.vocab_size = 2;
        p.max_sequence_length = 3;
        let m = build_metadata(&col(&["c b a b", "b c"]), FeatureType::Sequence, &p).unwrap();
        let v = m.vocab().unwrap();
        assert_eq!(v.id_to_token, [PAD, UNK, "b", "c"]);
        assert_eq!(v.max_sequence_length, 3);
    }

    #[test]
    fn metadata_json_has_type_tag() {
        let p = PreprocParams::defaults_for(FeatureType::Vector);
        let m = build_metadata(&col(&["1 2"]), FeatureType::Vector, &p).unwrap();
        let json = serde_json::to_value(&m).unwrap();
        assert_eq!(json, serde_json::json!({"type": "vector", "vector_size": 2}));
        let back: FeatureMetadata = serde_json::from_value(json).unwrap();
        assert_eq!(back, m);
    }

    proptest! {
        #[test]
        fn vocabulary_matches_oracle_and_is_dense(
            tokens in proptest::collection::vec("[a-f]", 1..40),
            cap in 1usize..8,
        ) {
            let mut p = PreprocParams::defaults_for(FeatureType::Category);
            p.vocab_size = cap;
            let m = build_metadata(&tokens, FeatureType::Category, &p).unwrap();
            let v = m.vocab().unwrap();
            let refs: Vec<&str> = tokens.iter().map(String::as_str).collect();
            prop_assert_eq!(&v.id_to_token, &oracle_vocab(&refs, &[UNK], cap));
            for (i, t) in v.id_to_token.iter().enumerate() {
                prop_assert_eq!(v.token_to_id[t], i);
            }
            prop_assert_eq!(v.token_to_id.len(), v.id_to_token.len());
        }

        #[test]
        fn zscore_standardizes_training_column(
            values in proptest::collection::vec(-1e3f64..1e3, 2..50),
        ) {
            prop_assume!(values.iter().any(|v| (v - values[0]).abs() > 1e-3));
            let p = PreprocParams::defaults_for(FeatureType::Numerical);
            let raw: Vec<String> = values.iter().map(|v| v.to_string()).collect();
            let m = build_metadata(&raw, FeatureType::Numerical, &p).unwrap();
            let z: Vec<f64> = raw
                .iter()
                .map(|r| preprocess_value(r, FeatureType::Numerical, &m, &p).unwrap().item())
                .collect();
            let n = z.len() as f64;
            let mean = z.iter().sum::<f64>() / n;
            let std = (z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!((std - 1.0).abs() < 1e-9);
        }
    }
}
