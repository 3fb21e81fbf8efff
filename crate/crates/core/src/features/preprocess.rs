use serde::{Deserialize, Serialize};

use super::metadata::{FeatureMetadata, VocabMetadata, UNK};
use super::{tokenize, FeatureError, FeatureType, TokenizerKind};
use crate::autodiff::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    Zscore,
    Minmax,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingStrategy {
    FillConst,
    FillMean,
    DropRow,
}

/// Fully resolved pre-processing parameters of one feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocParams {
    pub tokenizer: TokenizerKind,
    pub max_sequence_length: usize,
    pub vocab_size: usize,
    pub lowercase: bool,
    pub normalization: Normalization,
    pub missing_value_strategy: MissingStrategy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fill_value: Option<String>,
}

impl PreprocParams {
    pub fn defaults_for(ftype: FeatureType) -> Self {
        Self {
            tokenizer: TokenizerKind::Space,
            max_sequence_length: 256,
            vocab_size: 10_000,
            lowercase: ftype == FeatureType::Text,
            normalization: if ftype == FeatureType::Numerical {
                Normalization::Zscore
            } else {
                Normalization::None
            },
            missing_value_strategy: MissingStrategy::FillConst,
            fill_value: None,
        }
    }

    /// Checks the parameters make sense for `ftype`.
    pub fn validate(&self, ftype: FeatureType) -> Result<(), String> {
        if self.max_sequence_length == 0 {
            return Err("max_sequence_length must be positive".into());
        }
        if self.vocab_size == 0 {
            return Err("vocab_size must be positive".into());
        }
        if ftype != FeatureType::Numerical {
            if self.normalization != Normalization::None {
                return Err(format!("normalization is only valid for numerical features, not {ftype}"));
            }
            if self.missing_value_strategy == MissingStrategy::FillMean {
                return Err(format!("fill_mean is only valid for numerical features, not {ftype}"));
            }
        }
        if let Some(fill) = &self.fill_value {
            match ftype {
                FeatureType::Numerical if fill.trim().parse::<f64>().is_err() => {
                    return Err(format!("fill_value `{fill}` is not a number"));
                }
                FeatureType::Binary if parse_binary(fill).is_err() => {
                    return Err(format!("fill_value `{fill}` is not a binary value"));
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Constant used for missing cells under `fill_const`.
    pub fn fill_constant(&self, ftype: FeatureType) -> String {
        if let Some(v) = &self.fill_value {
            return v.clone();
        }
        match ftype {
            FeatureType::Binary => "false".into(),
            FeatureType::Numerical => "0".into(),
            FeatureType::Category => UNK.into(),
            FeatureType::Set | FeatureType::Sequence | FeatureType::Text | FeatureType::Vector => {
                String::new()
            }
        }
    }
}

pub fn is_missing(raw: &str) -> bool {
    raw.trim().is_empty()
}

pub fn parse_binary(raw: &str) -> Result<bool, FeatureError> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "t" | "yes" => Ok(true),
        "false" | "0" | "f" | "no" => Ok(false),
        _ => Err(FeatureError::value(format!(
            "`{raw}` is not a recognized binary value"
        ))),
    }
}

pub(crate) fn parse_number(raw: &str) -> Result<f64, FeatureError> {
    raw.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| FeatureError::value(format!("`{raw}` is not a finite number")))
}

pub(crate) fn parse_vector(raw: &str) -> Result<Vec<f64>, FeatureError> {
    raw.split_whitespace().map(parse_number).collect()
}

/// Tokens of a cell as seen by the vocabulary of `ftype`.
pub(crate) fn cell_tokens(raw: &str, ftype: FeatureType, params: &PreprocParams) -> Vec<String> {
    let text = if params.lowercase {
        raw.to_lowercase()
    } else {
        raw.to_string()
    };
    match ftype {
        FeatureType::Category => vec![text.trim().to_string()],
        FeatureType::Set => text.split_whitespace().map(str::to_string).collect(),
        FeatureType::Sequence | FeatureType::Text => tokenize(&text, params.tokenizer),
        _ => Vec::new(),
    }
}

fn vocab_of(meta: &FeatureMetadata, ftype: FeatureType) -> Result<&VocabMetadata, FeatureError> {
    meta.vocab()
        .ok_or_else(|| FeatureError::Contract(format!("metadata for a {ftype} feature has no vocabulary")))
}

/// Maps one raw cell to its tensor representation.
pub fn preprocess_value(
    raw: &str,
    ftype: FeatureType,
    meta: &FeatureMetadata,
    params: &PreprocParams,
) -> Result<Tensor, FeatureError> {
    if meta.feature_type() != ftype {
        return Err(FeatureError::Contract(format!(
            "metadata of type {} used for a {ftype} feature",
            meta.feature_type()
        )));
    }
    let filled;
    let raw = if is_missing(raw) {
        filled = match (params.missing_value_strategy, meta) {
            (MissingStrategy::FillMean, FeatureMetadata::Numerical { mean, .. }) => mean.to_string(),
            _ => params.fill_constant(ftype),
        };
        filled.as_str()
    } else {
        raw
    };
    let tensor = match (ftype, meta) {
        (FeatureType::Binary, _) => {
            let v = parse_binary(raw)?;
            Tensor::scalar(if v { 1.0 } else { 0.0 })
        }
        (FeatureType::Numerical, meta) => Tensor::scalar(meta.normalize(parse_number(raw)?)),
        (FeatureType::Category, _) => {
            let vocab = vocab_of(meta, ftype)?;
            let token = &cell_tokens(raw, ftype, params)[0];
            Tensor::scalar(vocab.id_or_unk(token) as f64)
        }
        (FeatureType::Set, _) => {
            let vocab = vocab_of(meta, ftype)?;
            let mut hot = vec![0.0; vocab.len()];
            for t in cell_tokens(raw, ftype, params) {
                hot[vocab.id_or_unk(&t)] = 1.0;
            }
            Tensor::vector(hot).expect("vocabulary is never empty")
        }
        (FeatureType::Sequence | FeatureType::Text, _) => {
            let vocab = vocab_of(meta, ftype)?;
            Tensor::vector(
                encode_sequence(&cell_tokens(raw, ftype, params), vocab)
                    .into_iter()
                    .map(|id| id as f64)
                    .collect(),
            )
            .expect("max_sequence_length is positive")
        }
        (FeatureType::Vector, FeatureMetadata::Vector { vector_size }) => {
            let values = if is_missing(raw) {
                vec![0.0; *vector_size]
            } else {
                parse_vector(raw)?
            };
            if values.len() != *vector_size {
                return Err(FeatureError::value(format!(
                    "vector has {} values, expected {vector_size}",
                    values.len()
                )));
            }
            Tensor::vector(values).expect("vector_size is positive")
        }
        (FeatureType::Vector, _) => unreachable!("metadata type checked above"),
    };
    Ok(tensor)
}

/// Token ids right-padded with `<PAD>` and truncated to `max_sequence_length`.
pub(crate) fn encode_sequence(tokens: &[String], vocab: &VocabMetadata) -> Vec<usize> {
    let len = vocab.max_sequence_length;
    let mut ids: Vec<usize> = tokens.iter().take(len).map(|t| vocab.id_or_unk(t)).collect();
    ids.resize(len, vocab.pad_id().unwrap_or(0));
    ids
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::build_metadata;
    use proptest::prelude::*;

    fn meta_for(col: &[&str], ftype: FeatureType, params: &PreprocParams) -> FeatureMetadata {
        let col: Vec<String> = col.iter().map(|s| s.to_string()).collect();
        build_metadata(&col, ftype, params).unwrap()
    }

    #[test]
    fn binary_true() {
        let p = PreprocParams::defaults_for(FeatureType::Binary);
        let m = meta_for(&["true", "false"], FeatureType::Binary, &p);
        assert_eq!(preprocess_value("true", FeatureType::Binary, &m, &p).unwrap().data(), &[1.0]);
        assert_eq!(preprocess_value("No", FeatureType::Binary, &m, &p).unwrap().data(), &[0.0]);
        assert!(preprocess_value("maybe", FeatureType::Binary, &m, &p).is_err());
    }

    #[test]
    fn unknown_category_maps_to_unk() {
        let p = PreprocParams::defaults_for(FeatureType::Category);
        let m = meta_for(&["a", "b", "a"], FeatureType::Category, &p);
        let unk = m.vocab().unwrap().token_to_id[UNK];
        let t = preprocess_value("zzz", FeatureType::Category, &m, &p).unwrap();
        assert_eq!(t.data(), &[unk as f64]);
    }

    #[test]
    fn text_mapping_and_padding() {
        let mut p = PreprocParams::defaults_for(FeatureType::Text);
        p.max_sequence_length = 4;
        // "a" and "b" land on ids 2 and 3 after <PAD>, <UNK>.
        let m = meta_for(&["a b", "a b c d e"], FeatureType::Text, &p);
        let v = m.vocab().unwrap();
        assert_eq!(v.token_to_id["a"], 2);
        assert_eq!(v.token_to_id["b"], 3);
        let t = preprocess_value("a b", FeatureType::Text, &m, &p).unwrap();
        assert_eq!(t.data(), &[2.0, 3.0, 0.0, 0.0]);
    }

    #[test]
    fn unparseable_numerical_is_value_error() {
        let p = PreprocParams::defaults_for(FeatureType::Numerical);
        let m = meta_for(&["1", "2"], FeatureType::Numerical, &p);
        let err = preprocess_value("abc", FeatureType::Numerical, &m, &p)
            .unwrap_err()
            .with_context("row 7, column x");
        assert!(err.to_string().contains("row 7"));
    }

    #[test]
    fn missing_values_follow_strategy() {
        let mut p = PreprocParams::defaults_for(FeatureType::Numerical);
        let m = meta_for(&["1", "2", "6"], FeatureType::Numerical, &p);
        p.missing_value_strategy = MissingStrategy::FillMean;
        let t = preprocess_value("", FeatureType::Numerical, &m, &p).unwrap();
        assert!(t.item().abs() < 1e-12);
        p.missing_value_strategy = MissingStrategy::FillConst;
        p.fill_value = Some("3".into());
        let t = preprocess_value(" ", FeatureType::Numerical, &m, &p).unwrap();
        assert!((t.item() - m.normalize(3.0)).abs() < 1e-15);
    }

    #[test]
    fn vector_length_checked() {
        let p = PreprocParams::defaults_for(FeatureType::Vector);
        let m = meta_for(&["1 2 3"], FeatureType::Vector, &p);
        assert_eq!(
            preprocess_value("4 5 6", FeatureType::Vector, &m, &p).unwrap().data(),
            &[4.0, 5.0, 6.0]
        );
        assert!(preprocess_value("4 5", FeatureType::Vector, &m, &p).is_err());
    }

    #[test]
    fn set_multi_hot() {
        let p = PreprocParams::defaults_for(FeatureType::Set);
        let m = meta_for(&["x y", "y"], FeatureType::Set, &p);
        // id→token = [<UNK>, y, x]
        let t = preprocess_value("x q", FeatureType::Set, &m, &p).unwrap();
        assert_eq!(t.data(), &[1.0, 0.0, 1.0]);
    }

    #[test]
    fn params_validated_per_type() {
        let mut p = PreprocParams::defaults_for(FeatureType::Text);
        assert!(p.validate(FeatureType::Text).is_ok());
        p.missing_value_strategy = MissingStrategy::FillMean;
        assert!(p.validate(FeatureType::Text).is_err());
        let mut p = PreprocParams::defaults_for(FeatureType::Numerical);
        p.fill_value = Some("x".into());
        assert!(p.validate(FeatureType::Numerical).is_err());
    }

    proptest! {
        #[test]
        fn sequence_length_is_exactly_max_len(
            words in proptest::collection::vec("[a-e]{1,3}", 0..12),
            max_len in 1usize..8,
        ) {
            let mut p = PreprocParams::defaults_for(FeatureType::Sequence);
            p.max_sequence_length = max_len;
            let line = words.join(" ");
            let m = meta_for(&["a b c d e aa bb", line.as_str()], FeatureType::Sequence, &p);
            let len = m.vocab().unwrap().max_sequence_length;
            let t = preprocess_value(&line, FeatureType::Sequence, &m, &p).unwrap();
            prop_assert_eq!(t.len(), len);
            let content = words.len().min(len);
            prop_assert!(t.data()[..content].iter().all(|&id| id != 0.0));
            prop_assert!(t.data()[content..].iter().all(|&id| id == 0.0));
            // purity
            prop_assert_eq!(t, preprocess_value(&line, FeatureType::Sequence, &m, &p).unwrap());
        }
    }
}
