use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ConfigError;
use crate::autodiff::OptimizerKind;
use crate::features::{FeatureType, MissingStrategy, Normalization, PreprocParams, TokenizerKind};

/// Open keyword map handed to component factories.
pub type Params = BTreeMap<String, serde_yaml::Value>;

/// Pre-processing parameters as written by the user; absent keys are
/// filled during resolution.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokenizer: Option<TokenizerKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_sequence_length: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lowercase: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalization: Option<Normalization>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub missing_value_strategy: Option<MissingStrategy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fill_value: Option<String>,
}

impl PreprocOverrides {
    /// `self` over `base`: keys set here win.
    pub fn over(&self, base: &PreprocOverrides) -> PreprocOverrides {
        PreprocOverrides {
            tokenizer: self.tokenizer.or(base.tokenizer),
            max_sequence_length: self.max_sequence_length.or(base.max_sequence_length),
            vocab_size: self.vocab_size.or(base.vocab_size),
            lowercase: self.lowercase.or(base.lowercase),
            normalization: self.normalization.or(base.normalization),
            missing_value_strategy: self.missing_value_strategy.or(base.missing_value_strategy),
            fill_value: self.fill_value.clone().or_else(|| base.fill_value.clone()),
        }
    }

    pub fn complete(&self, ftype: FeatureType) -> PreprocParams {
        let d = PreprocParams::defaults_for(ftype);
        PreprocParams {
            tokenizer: self.tokenizer.unwrap_or(d.tokenizer),
            max_sequence_length: self.max_sequence_length.unwrap_or(d.max_sequence_length),
            vocab_size: self.vocab_size.unwrap_or(d.vocab_size),
            lowercase: self.lowercase.unwrap_or(d.lowercase),
            normalization: self.normalization.unwrap_or(d.normalization),
            missing_value_strategy: self.missing_value_strategy.unwrap_or(d.missing_value_strategy),
            fill_value: self.fill_value.clone().or(d.fill_value),
        }
    }
}

impl From<PreprocParams> for PreprocOverrides {
    fn from(p: PreprocParams) -> Self {
        PreprocOverrides {
            tokenizer: Some(p.tokenizer),
            max_sequence_length: Some(p.max_sequence_length),
            vocab_size: Some(p.vocab_size),
            lowercase: Some(p.lowercase),
            normalization: Some(p.normalization),
            missing_value_strategy: Some(p.missing_value_strategy),
            fill_value: p.fill_value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputFeature {
    pub name: String,
    #[serde(rename = "type")]
    pub ftype: FeatureType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoder: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preprocessing: Option<PreprocOverrides>,
    /// Encoder hyperparameters.
    #[serde(flatten)]
    pub params: Params,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DependencyPayload {
    LastHidden,
    Probabilities,
}

impl DependencyPayload {
    pub fn default_for(ftype: FeatureType) -> Self {
        match ftype {
            FeatureType::Category | FeatureType::Binary | FeatureType::Set => Self::Probabilities,
            _ => Self::LastHidden,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSpec {
    #[serde(rename = "type", default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFeature {
    pub name: String,
    #[serde(rename = "type")]
    pub ftype: FeatureType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decoder: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<LossSpec>,
    /// Output features whose decoder results feed this one.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dependencies: Vec<String>,
    /// What this feature hands to the decoders that depend on it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dependency_payload: Option<DependencyPayload>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preprocessing: Option<PreprocOverrides>,
    /// Decoder hyperparameters.
    #[serde(flatten)]
    pub params: Params,
}

impl OutputFeature {
    pub fn loss_weight(&self) -> f64 {
        self.loss.as_ref().and_then(|l| l.weight).unwrap_or(1.0)
    }

    pub fn payload(&self) -> DependencyPayload {
        self.dependency_payload
            .unwrap_or_else(|| DependencyPayload::default_for(self.ftype))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CombinerSection {
    #[serde(rename = "type", default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(flatten)]
    pub params: Params,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    #[serde(rename = "type", default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<OptimizerKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
}

/// Either split fractions or the name of a column holding
/// `train` / `validation` / `test` labels.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub column: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SplitPolicy {
    Random {
        train: f64,
        validation: f64,
        test: f64,
    },
    Column(String),
}

impl SplitSection {
    pub fn policy(&self) -> SplitPolicy {
        match &self.column {
            Some(c) => SplitPolicy::Column(c.clone()),
            None => SplitPolicy::Random {
                train: self.train.unwrap_or(0.7),
                validation: self.validation.unwrap_or(0.1),
                test: self.test.unwrap_or(0.2),
            },
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<OptimizerSection>,
    /// Per-epoch multiplicative learning-rate decay.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate_decay: Option<f64>,
    /// Early-stopping patience in epochs; 0 disables early stopping.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patience: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation_field: Option<String>,
    /// A metric name valid for the validation field, or `loss`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation_metric: Option<String>,
}

/// The five-section declarative model definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDefinition {
    pub input_features: Vec<InputFeature>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub combiner: Option<CombinerSection>,
    pub output_features: Vec<OutputFeature>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub preprocessing: BTreeMap<FeatureType, PreprocOverrides>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingSection>,
}

impl ModelDefinition {
    pub fn training(&self) -> TrainingSection {
        self.training.clone().unwrap_or_default()
    }

    /// Effective pre-processing of one feature: feature-level keys over
    /// type-level keys over type defaults.
    pub fn preprocessing_for(&self, ftype: FeatureType, feature: Option<&PreprocOverrides>) -> PreprocParams {
        let type_level = self.preprocessing.get(&ftype).cloned().unwrap_or_default();
        match feature {
            Some(f) => f.over(&type_level).complete(ftype),
            None => type_level.complete(ftype),
        }
    }

    pub fn input(&self, name: &str) -> Option<&InputFeature> {
        self.input_features.iter().find(|f| f.name == name)
    }

    pub fn output(&self, name: &str) -> Option<&OutputFeature> {
        self.output_features.iter().find(|f| f.name == name)
    }

    /// Every (name, type, preprocessing) triple, inputs first.
    pub fn feature_preprocessing(&self) -> Vec<(String, FeatureType, PreprocParams)> {
        let inputs = self
            .input_features
            .iter()
            .map(|f| (f.name.clone(), f.ftype, self.preprocessing_for(f.ftype, f.preprocessing.as_ref())));
        let outputs = self
            .output_features
            .iter()
            .map(|f| (f.name.clone(), f.ftype, self.preprocessing_for(f.ftype, f.preprocessing.as_ref())));
        inputs.chain(outputs).collect()
    }

    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(self).expect("definition is always serializable")
    }
}

fn reject_tags(value: &serde_yaml::Value, path: &str) -> Result<(), ConfigError> {
    match value {
        serde_yaml::Value::Tagged(t) => Err(ConfigError::Schema {
            path: path.to_string(),
            message: format!("YAML tag `{}` is not supported", t.tag),
        }),
        serde_yaml::Value::Sequence(items) => items
            .iter()
            .enumerate()
            .try_for_each(|(i, v)| reject_tags(v, &format!("{path}[{i}]"))),
        serde_yaml::Value::Mapping(m) => m.iter().try_for_each(|(k, v)| {
            let key = k.as_str().map(str::to_string).unwrap_or_else(|| format!("{k:?}"));
            let child = if path.is_empty() { key } else { format!("{path}.{key}") };
            reject_tags(v, &child)
        }),
        _ => Ok(()),
    }
}

/// Parses a model definition document with a strict schema.
pub fn parse_model_definition(text: &str) -> Result<ModelDefinition, ConfigError> {
    let value: serde_yaml::Value = serde_yaml::from_str(text).map_err(|e| ConfigError::Parse {
        line: e.location().map(|l| l.line()),
        message: e.to_string(),
    })?;
    if !value.is_mapping() {
        return Err(ConfigError::Schema {
            path: String::new(),
            message: "model definition must be a mapping".into(),
        });
    }
    reject_tags(&value, "")?;
    let def: ModelDefinition = serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        ConfigError::Schema {
            path: if path == "." { String::new() } else { path },
            message: e.into_inner().to_string(),
        }
    })?;
    if def.input_features.is_empty() {
        return Err(ConfigError::Schema {
            path: "input_features".into(),
            message: "at least one input feature is required".into(),
        });
    }
    if def.output_features.is_empty() {
        return Err(ConfigError::Schema {
            path: "output_features".into(),
            message: "at least one output feature is required".into(),
        });
    }
    Ok(def)
}
