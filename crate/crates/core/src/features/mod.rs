//! Type-based data abstraction: tokenizers, metadata, pre/post-processing
//! and metrics for every supported feature type.

mod metadata;
mod metrics;
mod postprocess;
mod preprocess;
mod tokenize;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use metadata::{build_metadata, FeatureMetadata, VocabMetadata, PAD, UNK};
pub use metrics::{compute_metric, metrics_for_type, MetricKind};
pub use postprocess::{postprocess_prediction, Prediction};
pub use preprocess::{
    is_missing, parse_binary, preprocess_value, MissingStrategy, Normalization, PreprocParams,
};
pub use tokenize::{tokenize, TokenizerKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureType {
    Binary,
    Numerical,
    Category,
    Set,
    Sequence,
    Text,
    Vector,
}

impl FeatureType {
    pub const ALL: [FeatureType; 7] = [
        FeatureType::Binary,
        FeatureType::Numerical,
        FeatureType::Category,
        FeatureType::Set,
        FeatureType::Sequence,
        FeatureType::Text,
        FeatureType::Vector,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FeatureType::Binary => "binary",
            FeatureType::Numerical => "numerical",
            FeatureType::Category => "category",
            FeatureType::Set => "set",
            FeatureType::Sequence => "sequence",
            FeatureType::Text => "text",
            FeatureType::Vector => "vector",
        }
    }

    /// Sequence-shaped types whose tensors are `[max_len]` token ids.
    pub fn is_sequential(self) -> bool {
        matches!(self, FeatureType::Sequence | FeatureType::Text)
    }

    pub fn has_vocabulary(self) -> bool {
        matches!(
            self,
            FeatureType::Category | FeatureType::Set | FeatureType::Sequence | FeatureType::Text
        )
    }
}

impl fmt::Display for FeatureType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureType {
    type Err = FeatureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| FeatureError::Registry {
                kind: "feature type",
                name: s.to_string(),
                available: Self::ALL.iter().map(|t| t.name().to_string()).collect(),
            })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FeatureError {
    #[error("unknown {kind} `{name}`; available: {}", available.join(", "))]
    Registry {
        kind: &'static str,
        name: String,
        available: Vec<String>,
    },
    #[error("metadata error: {0}")]
    Metadata(String),
    #[error("value error{}: {message}", context.as_deref().map(|c| format!(" ({c})")).unwrap_or_default())]
    Value {
        message: String,
        context: Option<String>,
    },
    #[error("shape error: expected {expected:?}, got {actual:?}")]
    Shape {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("{0}")]
    Contract(String),
}

impl FeatureError {
    pub(crate) fn value(message: impl Into<String>) -> Self {
        FeatureError::Value {
            message: message.into(),
            context: None,
        }
    }

    /// Attaches row/column context to a value error.
    pub fn with_context(self, ctx: impl Into<String>) -> Self {
        match self {
            FeatureError::Value { message, .. } => FeatureError::Value {
                message,
                context: Some(ctx.into()),
            },
            other => other,
        }
    }
}
