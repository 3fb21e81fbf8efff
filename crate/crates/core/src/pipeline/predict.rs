use std::collections::BTreeMap;
use std::path::Path;

use super::artifact::{load_model, LoadedModel};
use super::dataset::Dataset;
use super::evaluate::{compute_metrics, evaluate, Metrics};
use super::preprocess::{check_tag_alignment, preprocess_split};
use super::train::{split_truths, train, write_json, TrainOptions, TrainResult, split_metrics};
use super::{PipelineError, Reporter};
use crate::config::{ModelDefinition, TrainingParams};
use crate::features::{FeatureType, Prediction};

pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const METRICS_FILE: &str = "metrics.json";

pub struct PredictResult {
    pub predictions: BTreeMap<String, Vec<Prediction>>,
    /// Present when the dataset holds every output column.
    pub metrics: Option<Metrics>,
}

/// Predicts every row of `dataset` with an already loaded model.
pub fn predict_loaded(loaded: &LoadedModel, dataset: &Dataset) -> Result<PredictResult, PipelineError> {
    let def = &loaded.definition;
    for f in &def.input_features {
        if dataset.column_index(&f.name).is_none() {
            return Err(PipelineError::Data(format!(
                "dataset has no column `{}` required by input feature `{}`",
                f.name, f.name
            )));
        }
    }
    let has_targets = def
        .output_features
        .iter()
        .all(|f| dataset.column_index(&f.name).is_some());
    let features = def.feature_preprocessing();
    let (inputs, outputs): (Vec<_>, Vec<_>) = features
        .into_iter()
        .partition(|(n, _, _)| def.input(n).is_some());
    let input_blocks = preprocess_split(dataset, &inputs, &loaded.metadata)?;
    let target_blocks = if has_targets {
        check_tag_alignment(dataset, def)?;
        Some(preprocess_split(dataset, &outputs, &loaded.metadata)?)
    } else {
        None
    };
    let batch_size = TrainingParams::from_definition(def).batch_size;
    let eval = evaluate(
        &loaded.model,
        def,
        &loaded.metadata,
        &input_blocks,
        target_blocks.as_ref(),
        batch_size,
    )?;
    let metrics = if has_targets && !dataset.is_empty() {
        Some(compute_metrics(def, &eval, &split_truths(def, dataset)?)?)
    } else {
        None
    };
    Ok(PredictResult {
        predictions: eval.predictions,
        metrics,
    })
}

/// Loads the model at `model_dir`, predicts `dataset`, and writes
/// `predictions.csv` (plus `metrics.json` when targets are present).
pub fn predict(model_dir: &Path, dataset: &Dataset, output_dir: &Path) -> Result<PredictResult, PipelineError> {
    let loaded = load_model(model_dir)?;
    let result = predict_loaded(&loaded, dataset)?;
    create_dir(output_dir)?;
    write_predictions(&output_dir.join(PREDICTIONS_FILE), &loaded.definition, &result.predictions, dataset.len())?;
    if let Some(m) = &result.metrics {
        write_json(&output_dir.join(METRICS_FILE), m)?;
    }
    Ok(result)
}

fn create_dir(dir: &Path) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir).map_err(|e| PipelineError::Artifact(format!("cannot create {}: {e}", dir.display())))
}

/// One column per output feature, followed by probability columns for
/// category, binary and set outputs.
pub fn write_predictions(
    path: &Path,
    def: &ModelDefinition,
    predictions: &BTreeMap<String, Vec<Prediction>>,
    rows: usize,
) -> Result<(), PipelineError> {
    let io = |e: csv::Error| PipelineError::Artifact(format!("cannot write {}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    let with_probs = |t: FeatureType| matches!(t, FeatureType::Category | FeatureType::Binary | FeatureType::Set);
    let mut header = Vec::new();
    for f in &def.output_features {
        header.push(f.name.clone());
        if with_probs(f.ftype) {
            if let Some(first) = predictions[&f.name].first() {
                for (label, _) in &first.probabilities {
                    header.push(format!("{}_probability_{label}", f.name));
                }
            }
        }
    }
    w.write_record(&header).map_err(io)?;
    for r in 0..rows {
        let mut record = Vec::with_capacity(header.len());
        for f in &def.output_features {
            let p = &predictions[&f.name][r];
            record.push(p.value.clone());
            if with_probs(f.ftype) {
                record.extend(p.probabilities.iter().map(|(_, v)| v.to_string()));
            }
        }
        w.write_record(&record).map_err(io)?;
    }
    w.flush()
        .map_err(|e| PipelineError::Artifact(format!("cannot write {}: {e}", path.display())))
}

/// Split name → metrics of every output feature.
pub type ExperimentReport = BTreeMap<String, Metrics>;

/// Trains, then evaluates the kept checkpoint on all three splits and
/// writes the consolidated `metrics.json`.
pub fn experiment(
    def: &ModelDefinition,
    dataset: &Dataset,
    opts: &TrainOptions,
    reporter: &mut dyn Reporter,
) -> Result<(TrainResult, ExperimentReport), PipelineError> {
    let result = train(def, dataset, opts, reporter)?;
    let batch_size = TrainingParams::from_definition(&result.definition).batch_size;
    let mut report = ExperimentReport::new();
    for (split, _) in result.splits.named() {
        let metrics = if result.data.rows(split) > 0 {
            split_metrics(
                &result.model,
                &result.definition,
                &result.metadata,
                &result.data,
                &result.splits,
                split,
                batch_size,
            )?
        } else {
            result
                .definition
                .output_features
                .iter()
                .map(|f| (f.name.clone(), BTreeMap::new()))
                .collect()
        };
        report.insert(split.to_string(), metrics);
    }
    write_json(&opts.output_dir.join(METRICS_FILE), &report)?;
    Ok((result, report))
}
