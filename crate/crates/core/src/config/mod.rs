//! Declarative model definitions: parsing, default resolution, validation
//! and the component registries they are resolved against.

mod definition;
mod registry;
mod resolve;
mod validate;

use std::fmt;

use thiserror::Error;

pub use definition::{
    parse_model_definition, CombinerSection, DependencyPayload, InputFeature, LossSpec,
    ModelDefinition, OptimizerSection, OutputFeature, Params, PreprocOverrides, SplitPolicy,
    SplitSection, TrainingSection,
};
pub use registry::{ComponentEntry, ComponentKind, Registry, RegistryError, Scope};
pub use resolve::{resolve_defaults, TrainingParams};
pub use validate::validate;

use crate::features::{metrics_for_type, FeatureType, MetricKind, TokenizerKind};
use crate::model::{self, CombinerFactory, DecoderFactory, EncoderFactory, LossKind};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("parse error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Parse { line: Option<usize>, message: String },
    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },
}

/// One validation finding, located by its path in the definition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub path: String,
    pub message: String,
}

impl Diagnostic {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

/// Every registry consulted when resolving, validating and building.
pub struct Registries {
    pub encoders: Registry<ComponentEntry<EncoderFactory>>,
    pub decoders: Registry<ComponentEntry<DecoderFactory>>,
    pub combiners: Registry<ComponentEntry<CombinerFactory>>,
    pub tokenizers: Registry<TokenizerKind>,
    pub metrics: Registry<MetricKind>,
    pub losses: Registry<LossKind>,
}

impl Registries {
    /// Registries pre-populated with every built-in component.
    pub fn builtin() -> Self {
        let mut reg = Registries {
            encoders: Registry::new(ComponentKind::Encoder),
            decoders: Registry::new(ComponentKind::Decoder),
            combiners: Registry::new(ComponentKind::Combiner),
            tokenizers: Registry::new(ComponentKind::Tokenizer),
            metrics: Registry::new(ComponentKind::Metric),
            losses: Registry::new(ComponentKind::Loss),
        };
        model::register_builtin_components(&mut reg).expect("built-in names are unique");
        for kind in TokenizerKind::ALL {
            reg.tokenizers
                .register(None, kind.name(), kind)
                .expect("built-in names are unique");
        }
        for ftype in FeatureType::ALL {
            for &m in metrics_for_type(ftype) {
                reg.metrics
                    .register(Some(ftype), m.name(), m)
                    .expect("built-in names are unique");
            }
            for loss in LossKind::for_type(ftype) {
                reg.losses
                    .register(Some(ftype), loss.name(), *loss)
                    .expect("built-in names are unique");
            }
        }
        reg
    }
}

impl fmt::Debug for Registries {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Registries")
            .field("encoders", &self.encoders)
            .field("decoders", &self.decoders)
            .field("combiners", &self.combiners)
            .finish_non_exhaustive()
    }
}
