use std::collections::BTreeMap;

use super::preprocess::Block;
use super::PipelineError;
use crate::autodiff::Tensor;
use crate::config::ModelDefinition;
use crate::features::{compute_metric, metrics_for_type, postprocess_prediction, FeatureMetadata, Prediction};
use crate::model::{EcdModel, TAGGER};

/// Metric name → value for one feature.
pub type FeatureMetrics = BTreeMap<String, f64>;
/// Feature name → its metrics.
pub type Metrics = BTreeMap<String, FeatureMetrics>;

pub const LOSS: &str = "loss";

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub predictions: BTreeMap<String, Vec<Prediction>>,
    /// Mean loss per output feature; empty without targets.
    pub losses: BTreeMap<String, f64>,
}

/// Tagger outputs with the input feature whose padding masks them.
fn tagger_inputs(def: &ModelDefinition) -> Vec<(String, String)> {
    let seq = def.input_features.iter().find(|f| f.ftype.is_sequential());
    def.output_features
        .iter()
        .filter(|f| f.decoder.as_deref() == Some(TAGGER))
        .filter_map(|f| seq.map(|s| (f.name.clone(), s.name.clone())))
        .collect()
}

fn row_tensor(t: &Tensor, r: usize) -> Tensor {
    let rows = t.dims()[0];
    let n = t.len() / rows;
    Tensor::new(t.dims()[1..].to_vec(), t.data()[r * n..(r + 1) * n].to_vec()).expect("row of a valid tensor")
}

/// Runs the model over every row in batches and post-processes the
/// outputs into raw space. Losses are averaged over rows when targets are
/// given.
pub fn evaluate(
    model: &EcdModel,
    def: &ModelDefinition,
    metadata: &BTreeMap<String, FeatureMetadata>,
    inputs: &BTreeMap<String, Block>,
    targets: Option<&BTreeMap<String, Block>>,
    batch_size: usize,
) -> Result<Evaluation, PipelineError> {
    let rows = inputs.values().next().map_or(0, |b| b.rows);
    let taggers = tagger_inputs(def);
    let mut predictions: BTreeMap<String, Vec<Prediction>> =
        def.output_features.iter().map(|f| (f.name.clone(), Vec::with_capacity(rows))).collect();
    let mut loss_sums: BTreeMap<String, f64> = BTreeMap::new();
    let indices: Vec<usize> = (0..rows).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let batch: BTreeMap<String, Tensor> = def
            .input_features
            .iter()
            .map(|f| (f.name.clone(), inputs[&f.name].batch(chunk)))
            .collect();
        let target_batch: Option<BTreeMap<String, Tensor>> = targets.map(|t| {
            def.output_features
                .iter()
                .map(|f| (f.name.clone(), t[&f.name].batch(chunk)))
                .collect()
        });
        let out = model
            .forward(&batch, target_batch.as_ref())
            .map_err(|e| PipelineError::Runtime(format!("forward pass failed: {e}")))?;
        for name in out.losses.keys() {
            *loss_sums.entry(name.clone()).or_default() += out.loss(name).unwrap() * chunk.len() as f64;
        }
        for f in &def.output_features {
            let probs = out.probabilities(&f.name).expect("every output is decoded");
            let meta = &metadata[&f.name];
            let mask_from = taggers.iter().find(|(o, _)| o == &f.name).map(|(_, i)| i);
            for (r, &row) in chunk.iter().enumerate() {
                let mut t = row_tensor(probs, r);
                if let Some(input) = mask_from {
                    mask_padding(&mut t, inputs[input].row(row), &metadata[input], meta);
                }
                let p = postprocess_prediction(&t, f.ftype, meta)
                    .map_err(|e| PipelineError::Runtime(format!("feature `{}`: {e}", f.name)))?;
                predictions.get_mut(&f.name).unwrap().push(p);
            }
        }
    }
    let losses = loss_sums
        .into_iter()
        .map(|(k, v)| (k, v / rows.max(1) as f64))
        .collect();
    Ok(Evaluation { predictions, losses })
}

/// Forces the tag at input padding positions to padding and rules padding
/// out everywhere else, so predictions are exactly as long as the input.
fn mask_padding(probs: &mut Tensor, input_ids: &[f64], input_meta: &FeatureMetadata, tag_meta: &FeatureMetadata) {
    let (Some(in_pad), Some(tag_pad)) = (
        input_meta.vocab().and_then(|v| v.pad_id()),
        tag_meta.vocab().and_then(|v| v.pad_id()),
    ) else {
        return;
    };
    let c = probs.dims()[1];
    let data = probs.data_mut();
    for (t, &id) in input_ids.iter().enumerate().take(data.len() / c) {
        let row = &mut data[t * c..(t + 1) * c];
        if id as usize == in_pad {
            row.fill(0.0);
            row[tag_pad] = 1.0;
        } else {
            // padding is never a training target, so it is not a real tag
            row[tag_pad] = 0.0;
            let total: f64 = row.iter().sum();
            if total > 0.0 {
                row.iter_mut().for_each(|p| *p /= total);
            }
        }
    }
}

/// Every metric of every output feature, computed on raw-space values.
pub fn compute_metrics(
    def: &ModelDefinition,
    eval: &Evaluation,
    truths: &BTreeMap<String, Vec<String>>,
) -> Result<Metrics, PipelineError> {
    let mut out = Metrics::new();
    for f in &def.output_features {
        let mut m = FeatureMetrics::new();
        let preds = &eval.predictions[&f.name];
        if !preds.is_empty() {
            for &kind in metrics_for_type(f.ftype) {
                let v = compute_metric(kind, f.ftype, &truths[&f.name], preds)
                    .map_err(|e| PipelineError::Data(format!("metric {kind} on `{}`: {e}", f.name)))?;
                m.insert(kind.name().to_string(), v);
            }
            if let Some(&l) = eval.losses.get(&f.name) {
                m.insert(LOSS.to_string(), l);
            }
        }
        out.insert(f.name.clone(), m);
    }
    Ok(out)
}
