use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::artifact::save_model;
use super::dataset::{split_dataset, Dataset, Splits};
use super::evaluate::{compute_metrics, evaluate, Metrics};
use super::preprocess::{cache_path, check_tag_alignment, collect_metadata, fingerprint, preprocess_dataset, CacheStatus, Preprocessed};
use super::{PipelineError, Reporter};
use crate::autodiff::{seeded_rng, OptimizerState, Tensor, TensorError};
use crate::config::{resolve_defaults, validate, ModelDefinition, Registries, TrainingParams, TrainingSection};
use crate::features::{is_missing, FeatureMetadata, MetricKind, MissingStrategy};
use crate::model::{EcdModel, ModelError};

pub const STATS_FILE: &str = "training_stats.json";
pub const MODEL_SUBDIR: &str = "model";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Row-weighted mean combined loss over the epoch's batches.
    pub train_loss: f64,
    pub train: Metrics,
    pub validation: Metrics,
    /// Value of the tracked validation metric.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingStats {
    pub validation_field: String,
    pub validation_metric: String,
    pub epochs: Vec<EpochStats>,
    /// Index into `epochs` of the checkpoint that was kept.
    pub best_epoch: Option<usize>,
    pub wall_clock_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub output_dir: PathBuf,
    /// Overrides `training.seed`.
    pub seed: Option<u64>,
    pub use_cache: bool,
}

pub struct TrainResult {
    /// Resolved definition with the effective seed recorded.
    pub definition: ModelDefinition,
    pub metadata: BTreeMap<String, FeatureMetadata>,
    pub model: EcdModel,
    pub stats: TrainingStats,
    pub splits: Splits,
    pub data: Preprocessed,
    pub cache: CacheStatus,
}

/// Validation improvement needed to reset the patience counter.
pub const MIN_IMPROVEMENT: f64 = 1e-6;

/// Resolves and validates a definition against a dataset header, fixing
/// the seed (explicit override, then `training.seed`, then the default).
pub fn prepare_definition(
    def: &ModelDefinition,
    header: &[String],
    seed: Option<u64>,
    registries: &Registries,
) -> Result<(ModelDefinition, TrainingParams), PipelineError> {
    let mut resolved = resolve_defaults(def, registries);
    if let Some(seed) = seed {
        resolved.training.get_or_insert_with(TrainingSection::default).seed = Some(seed);
    }
    let diagnostics = validate(&resolved, header, registries);
    if !diagnostics.is_empty() {
        return Err(PipelineError::Config(diagnostics));
    }
    let params = TrainingParams::from_definition(&resolved);
    Ok((resolved, params))
}

/// Removes rows missing a value in any feature whose strategy is `drop_row`.
pub fn drop_missing_rows(ds: &Dataset, def: &ModelDefinition) -> Result<Dataset, PipelineError> {
    let mut cols = Vec::new();
    for (name, _, params) in def.feature_preprocessing() {
        if params.missing_value_strategy == MissingStrategy::DropRow {
            cols.push(
                ds.column_index(&name)
                    .ok_or_else(|| PipelineError::Data(format!("dataset has no column `{name}`")))?,
            );
        }
    }
    let keep: Vec<usize> = (0..ds.len())
        .filter(|&r| cols.iter().all(|&c| !is_missing(&ds.rows[r][c])))
        .collect();
    Ok(ds.subset(&keep))
}

fn higher_is_better(metric: &str) -> bool {
    metric
        .parse::<MetricKind>()
        .map(MetricKind::higher_is_better)
        .unwrap_or(false)
}

fn runtime(epoch: usize, batch: usize, e: ModelError) -> PipelineError {
    match e {
        ModelError::Tensor(TensorError::NonFinite { op }) => PipelineError::Runtime(format!(
            "non-finite value in {op} at epoch {epoch}, batch {batch}; training aborted"
        )),
        other => PipelineError::Runtime(format!("epoch {epoch}, batch {batch}: {other}")),
    }
}

pub fn split_truths(def: &ModelDefinition, ds: &Dataset) -> Result<BTreeMap<String, Vec<String>>, PipelineError> {
    def.output_features
        .iter()
        .map(|f| Ok((f.name.clone(), ds.column(&f.name)?)))
        .collect()
}

/// Metrics of every output feature on one preprocessed split.
pub fn split_metrics(
    model: &EcdModel,
    def: &ModelDefinition,
    metadata: &BTreeMap<String, FeatureMetadata>,
    data: &Preprocessed,
    splits: &Splits,
    split: &str,
    batch_size: usize,
) -> Result<Metrics, PipelineError> {
    let blocks = data.split(split);
    let ds = splits.named().into_iter().find(|(n, _)| *n == split).unwrap().1;
    let eval = evaluate(model, def, metadata, blocks, Some(blocks), batch_size)?;
    compute_metrics(def, &eval, &split_truths(def, ds)?)
}

/// The full training pipeline: metadata from the training split,
/// preprocessing (cached beside the dataset), the epoch loop with early
/// stopping, and the best checkpoint saved under `output_dir/model`.
pub fn train(
    def: &ModelDefinition,
    dataset: &Dataset,
    opts: &TrainOptions,
    reporter: &mut dyn Reporter,
) -> Result<TrainResult, PipelineError> {
    let started = Instant::now();
    let registries = Registries::builtin();
    let (resolved, tp) = prepare_definition(def, &dataset.header, opts.seed, &registries)?;
    let seed = tp.seed;

    let kept = drop_missing_rows(dataset, &resolved)?;
    check_tag_alignment(&kept, &resolved)?;
    let splits = split_dataset(&kept, &tp.split, seed)?;
    if splits.train.is_empty() {
        return Err(PipelineError::Data("the training split has no rows".into()));
    }
    let metadata = collect_metadata(&splits.train, &resolved)?;
    let cache = (opts.use_cache && !dataset.source.as_os_str().is_empty()).then(|| {
        (
            cache_path(&dataset.source),
            fingerprint(dataset.digest, &resolved, &tp.split, seed),
        )
    });
    let outcome = preprocess_dataset(
        &splits,
        &metadata,
        &resolved,
        cache.as_ref().map(|(p, f)| (p.as_path(), *f)),
    )?;
    for w in &outcome.warnings {
        reporter.warn(w);
    }
    let data = outcome.data;

    let mut model = EcdModel::build(&resolved, &metadata, &registries, seed).map_err(PipelineError::from)?;
    let mut optimizer =
        OptimizerState::new(tp.optimizer).map_err(|e| PipelineError::Runtime(e.to_string()))?;

    let train_blocks = data.split("train");
    let eval_split = if data.rows("validation") > 0 { "validation" } else { "train" };
    let higher = higher_is_better(&tp.validation_metric);
    let mut shuffle_rng = seeded_rng(seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..data.rows("train")).collect();
    let mut epochs = Vec::new();
    let mut best: Option<(usize, f64, Vec<Tensor>)> = None;
    let mut stale = 0usize;
    let mut lr = tp.optimizer.learning_rate;

    for epoch in 0..tp.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(tp.batch_size).enumerate() {
            let pick = |names: &mut dyn Iterator<Item = &String>| -> BTreeMap<String, Tensor> {
                names.map(|n| (n.clone(), train_blocks[n].batch(chunk))).collect()
            };
            let inputs = pick(&mut resolved.input_features.iter().map(|f| &f.name));
            let targets = pick(&mut resolved.output_features.iter().map(|f| &f.name));
            let out = model
                .forward(&inputs, Some(&targets))
                .map_err(|e| runtime(epoch, b, e))?;
            let loss = out.total_loss().expect("targets were given");
            if !loss.is_finite() {
                return Err(runtime(epoch, b, ModelError::Tensor(TensorError::NonFinite { op: "loss" })));
            }
            loss_sum += loss * chunk.len() as f64;
            let grads = out.backward().map_err(|e| runtime(epoch, b, e))?;
            optimizer
                .step(model.params_mut(), grads.params())
                .map_err(|e| runtime(epoch, b, e.into()))?;
        }

        let train_metrics = split_metrics(&model, &resolved, &metadata, &data, &splits, "train", tp.batch_size)?;
        let validation_metrics = if eval_split == "validation" {
            split_metrics(&model, &resolved, &metadata, &data, &splits, "validation", tp.batch_size)?
        } else {
            Metrics::new()
        };
        let tracked = if eval_split == "validation" { &validation_metrics } else { &train_metrics };
        let score = tracked
            .get(&tp.validation_field)
            .and_then(|m| m.get(&tp.validation_metric))
            .copied()
            .ok_or_else(|| {
                PipelineError::Runtime(format!(
                    "validation metric {}.{} was not computed",
                    tp.validation_field, tp.validation_metric
                ))
            })?;
        let stats = EpochStats {
            epoch,
            learning_rate: lr,
            train_loss: loss_sum / order.len() as f64,
            train: train_metrics,
            validation: validation_metrics,
            score,
        };
        reporter.progress(&format!(
            "epoch {:>3}  loss {:.6}  {} {}.{} {:.6}",
            epoch + 1,
            stats.train_loss,
            eval_split,
            tp.validation_field,
            tp.validation_metric,
            score
        ));
        epochs.push(stats);

        let improved = match &best {
            None => true,
            Some((_, b, _)) if higher => score > b + MIN_IMPROVEMENT,
            Some((_, b, _)) => score < b - MIN_IMPROVEMENT,
        };
        if improved {
            best = Some((epoch, score, model.params().iter().map(|p| p.tensor.clone()).collect()));
            stale = 0;
        } else {
            stale += 1;
            if tp.patience > 0 && stale >= tp.patience {
                reporter.progress(&format!("early stopping after epoch {}", epoch + 1));
                break;
            }
        }
        lr *= tp.learning_rate_decay;
        optimizer.set_learning_rate(lr);
    }

    if let Some((_, _, tensors)) = &best {
        for (p, t) in model.params_mut().iter_mut().zip(tensors) {
            p.tensor = t.clone();
        }
    }
    let stats = TrainingStats {
        validation_field: tp.validation_field.clone(),
        validation_metric: tp.validation_metric.clone(),
        epochs,
        best_epoch: best.map(|(e, _, _)| e),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    save_model(&model, &resolved, &metadata, &opts.output_dir.join(MODEL_SUBDIR))?;
    write_json(&opts.output_dir.join(STATS_FILE), &stats)?;

    Ok(TrainResult {
        definition: resolved,
        metadata,
        model,
        stats,
        splits,
        data,
        cache: outcome.status,
    })
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| PipelineError::Artifact(format!("cannot write {}: {e}", path.display())))
}
