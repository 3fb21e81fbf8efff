//! Training and prediction pipelines: CSV ingestion, splitting, metadata
//! collection, cached preprocessing, the training loop, model artifacts and
//! prediction.

mod artifact;
mod binio;
mod dataset;
mod evaluate;
mod predict;
mod preprocess;
mod train;

use std::hash::Hasher;

use thiserror::Error;

pub use artifact::{
    decode_weights, encode_weights, load_model, metadata_json, model_dir, save_model, LoadedModel, WeightsError,
    DEFINITION_FILE, METADATA_FILE, WEIGHTS_FILE, WEIGHTS_VERSION,
};
pub use dataset::{load_dataset, parse_csv, split_dataset, Dataset, Splits};
pub use evaluate::{compute_metrics, evaluate, Evaluation, FeatureMetrics, Metrics, LOSS};
pub use predict::{
    experiment, predict, predict_loaded, write_predictions, ExperimentReport, PredictResult, METRICS_FILE,
    PREDICTIONS_FILE,
};
pub use preprocess::{
    cache_path, check_tag_alignment, collect_metadata, decode_cache, encode_cache, fingerprint, preprocess_dataset, preprocess_split, Block,
    CacheStatus, PreprocessOutcome, Preprocessed,
};
pub use train::{
    drop_missing_rows, prepare_definition, split_metrics, train, EpochStats, TrainOptions, TrainResult,
    TrainingStats, MIN_IMPROVEMENT, MODEL_SUBDIR, STATS_FILE,
};

use crate::config::{ConfigError, Diagnostic};
use crate::model::ModelError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid model definition:\n{}", .0.iter().map(|d| format!("  {d}")).collect::<Vec<_>>().join("\n"))]
    Config(Vec<Diagnostic>),
    #[error(transparent)]
    Parse(#[from] ConfigError),
    #[error("data error: {0}")]
    Data(String),
    #[error("artifact error: {0}")]
    Artifact(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl PipelineError {
    /// Process exit code: 2 config, 3 data or artifact, 4 runtime.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::Parse(_) => 2,
            PipelineError::Data(_) | PipelineError::Artifact(_) => 3,
            PipelineError::Runtime(_) => 4,
        }
    }
}

impl From<ModelError> for PipelineError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(m) => PipelineError::Config(vec![Diagnostic::new("model", m)]),
            ModelError::Registry(r) => PipelineError::Config(vec![Diagnostic::new("model", r.to_string())]),
            ModelError::Dag(d) => PipelineError::Config(vec![Diagnostic::new("output_features", d.to_string())]),
            ModelError::Feature(f) => PipelineError::Data(f.to_string()),
            other => PipelineError::Runtime(other.to_string()),
        }
    }
}

/// Receives progress lines and warnings from a pipeline run.
pub trait Reporter {
    fn progress(&mut self, line: &str);
    fn warn(&mut self, line: &str);
}

/// Progress to stdout unless quiet; warnings always to stderr.
pub struct ConsoleReporter {
    pub quiet: bool,
}

impl Reporter for ConsoleReporter {
    fn progress(&mut self, line: &str) {
        if !self.quiet {
            println!("{line}");
        }
    }

    fn warn(&mut self, line: &str) {
        eprintln!("warning: {line}");
    }
}

/// Collects everything instead of printing it.
#[derive(Debug, Default)]
pub struct RecordingReporter {
    pub progress: Vec<String>,
    pub warnings: Vec<String>,
}

impl Reporter for RecordingReporter {
    fn progress(&mut self, line: &str) {
        self.progress.push(line.to_string());
    }

    fn warn(&mut self, line: &str) {
        self.warnings.push(line.to_string());
    }
}

/// 64-bit FNV-1a.
pub fn fnv_digest(bytes: &[u8]) -> u64 {
    let mut h = fnv::FnvHasher::default();
    h.write(bytes);
    h.finish()
}
