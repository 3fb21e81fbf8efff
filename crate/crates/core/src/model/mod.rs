//! Encoder-combiner-decoder models: component traits, the built-in
//! encoders/combiner/decoders, the output dependency graph and the
//! assembled [`EcdModel`].

mod combiner;
mod dag;
mod decoders;
mod ecd;
mod encoders;
mod layers;

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

use crate::autodiff::{glorot_uniform, ModelRng, Parameter, ParameterStore, Tape, Tensor, TensorError, Var};
use crate::config::{Params, Registries, RegistryError};
use crate::features::{FeatureError, FeatureMetadata, FeatureType};

pub use combiner::CONCAT;
pub use dag::{build_dependency_order, DagError, DecoderNode};
pub use decoders::{LossKind, TAGGER};
pub use ecd::{combined_loss, EcdModel, ForwardOutput};
pub use layers::{FcStack, HyperParams};

pub const DEFAULT_COMBINER: &str = CONCAT;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Dag(#[from] DagError),
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Contract(String),
}

/// Default encoder name per input type.
pub fn default_encoder(ftype: FeatureType) -> &'static str {
    match ftype {
        FeatureType::Binary | FeatureType::Numerical => "passthrough",
        FeatureType::Category | FeatureType::Sequence | FeatureType::Text => "embed",
        FeatureType::Set => "embed_sum",
        FeatureType::Vector => "dense",
    }
}

/// Default decoder name per output type; `None` where no decoder exists.
pub fn default_decoder(ftype: FeatureType) -> Option<&'static str> {
    match ftype {
        FeatureType::Category | FeatureType::Set => Some("classifier"),
        FeatureType::Binary | FeatureType::Numerical => Some("regressor"),
        FeatureType::Sequence => Some(TAGGER),
        FeatureType::Text | FeatureType::Vector => None,
    }
}

/// Tape plus the variables of every model parameter.
pub struct Forward {
    pub tape: Tape,
    vars: BTreeMap<String, Var>,
}

impl Forward {
    pub fn new(params: &ParameterStore) -> Self {
        let mut tape = Tape::new();
        let vars = params
            .iter()
            .map(|p| (p.name.clone(), tape.parameter(p.name.clone(), p.tensor.clone())))
            .collect();
        Self { tape, vars }
    }

    pub fn param(&self, name: &str) -> Result<Var, ModelError> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| ModelError::Contract(format!("unknown parameter `{name}`")))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.tape.value(v)
    }
}

/// Everything a component factory may use while building.
pub struct BuildContext<'a> {
    /// Owning feature name, or `combiner`.
    pub feature: &'a str,
    pub ftype: Option<FeatureType>,
    pub metadata: Option<&'a FeatureMetadata>,
    /// Widths of the tensors the component will receive.
    pub input_widths: Vec<usize>,
    /// Width of per-timestep states available to a tagger.
    pub state_width: Option<usize>,
    pub store: &'a mut ParameterStore,
    pub rng: &'a mut ModelRng,
    prefix: String,
}

impl<'a> BuildContext<'a> {
    pub fn new(
        prefix: impl Into<String>,
        feature: &'a str,
        store: &'a mut ParameterStore,
        rng: &'a mut ModelRng,
    ) -> Self {
        Self {
            feature,
            ftype: None,
            metadata: None,
            input_widths: Vec::new(),
            state_width: None,
            store,
            rng,
            prefix: prefix.into(),
        }
    }

    pub fn input_width(&self) -> usize {
        self.input_widths.iter().sum()
    }

    pub fn metadata(&self) -> Result<&'a FeatureMetadata, ModelError> {
        self.metadata
            .ok_or_else(|| ModelError::Contract(format!("no metadata for `{}`", self.feature)))
    }

    fn full_name(&self, local: &str) -> String {
        format!("{}.{local}", self.prefix)
    }

    /// Registers a Glorot-initialized parameter and returns its full name.
    pub fn glorot(&mut self, local: &str, dims: &[usize], fan_in: usize, fan_out: usize) -> Result<String, ModelError> {
        let t = glorot_uniform(dims, fan_in, fan_out, self.rng);
        self.add(local, t)
    }

    pub fn zeros(&mut self, local: &str, dims: &[usize]) -> Result<String, ModelError> {
        self.add(local, Tensor::zeros(dims))
    }

    fn add(&mut self, local: &str, t: Tensor) -> Result<String, ModelError> {
        let name = self.full_name(local);
        self.store.insert(Parameter::new(name.clone(), t)?)?;
        Ok(name)
    }
}

/// Output of an encoder for one batch.
#[derive(Debug, Clone, Copy)]
pub struct Encoded {
    /// `[b×h]` representation.
    pub hidden: Var,
    /// `[b×s×h_s]` per-timestep states, for sequence encoders.
    pub states: Option<Var>,
}

pub trait Encoder: Send + Sync {
    fn output_width(&self) -> usize;

    fn state_width(&self) -> Option<usize> {
        None
    }

    /// Encodes a `[b×w]` batch as produced by preprocessing.
    fn encode(&self, f: &mut Forward, input: &Tensor) -> Result<Encoded, ModelError>;
}

pub trait Combiner: Send + Sync {
    fn output_width(&self) -> usize;

    /// Combines encoder outputs given in input-feature declaration order.
    fn combine(&self, f: &mut Forward, hiddens: &[Var]) -> Result<Var, ModelError>;
}

/// Output of a decoder for one batch.
#[derive(Debug, Clone, Copy)]
pub struct Decoded {
    pub logits: Var,
    /// Probabilities, or the prediction itself for regressors.
    pub probabilities: Var,
    pub last_hidden: Var,
}

pub trait Decoder: Send + Sync {
    fn hidden_width(&self) -> usize;

    fn probabilities_width(&self) -> usize;

    fn uses_sequence_states(&self) -> bool {
        false
    }

    fn decode(&self, f: &mut Forward, input: Var, states: Option<Var>) -> Result<Decoded, ModelError>;

    /// Loss of `decoded` against a preprocessed target batch.
    fn loss(&self, f: &mut Forward, decoded: &Decoded, target: &Tensor) -> Result<Var, ModelError>;
}

pub type EncoderFactory =
    Arc<dyn Fn(&mut BuildContext, &Params) -> Result<Box<dyn Encoder>, ModelError> + Send + Sync>;
pub type CombinerFactory =
    Arc<dyn Fn(&mut BuildContext, &Params) -> Result<Box<dyn Combiner>, ModelError> + Send + Sync>;
pub type DecoderFactory =
    Arc<dyn Fn(&mut BuildContext, &Params) -> Result<Box<dyn Decoder>, ModelError> + Send + Sync>;

pub(crate) fn register_builtin_components(reg: &mut Registries) -> Result<(), RegistryError> {
    encoders::register(&mut reg.encoders)?;
    combiner::register(&mut reg.combiners)?;
    decoders::register(&mut reg.decoders)?;
    Ok(())
}

/// Integer ids stored in a preprocessed tensor.
pub(crate) fn ids_of(t: &Tensor) -> Result<Vec<usize>, ModelError> {
    t.data()
        .iter()
        .map(|&v| {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(ModelError::Contract(format!("expected a non-negative integer id, got {v}")))
            }
        })
        .collect()
}

pub(crate) fn expect_batch(t: &Tensor, width: usize, what: &str) -> Result<usize, ModelError> {
    match t.dims() {
        &[b, w] if w == width => Ok(b),
        dims => Err(ModelError::Contract(format!(
            "{what}: expected a [batch×{width}] input, got {dims:?}"
        ))),
    }
}
