use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::metadata::UNK;
use super::preprocess::{parse_binary, parse_number};
use super::{FeatureError, FeatureType, Prediction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Accuracy,
    CrossEntropy,
    Mse,
    Mae,
    R2,
    TokenAccuracy,
    Jaccard,
}

impl MetricKind {
    pub const ALL: [MetricKind; 7] = [
        MetricKind::Accuracy,
        MetricKind::CrossEntropy,
        MetricKind::Mse,
        MetricKind::Mae,
        MetricKind::R2,
        MetricKind::TokenAccuracy,
        MetricKind::Jaccard,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Accuracy => "accuracy",
            MetricKind::CrossEntropy => "cross_entropy",
            MetricKind::Mse => "mse",
            MetricKind::Mae => "mae",
            MetricKind::R2 => "r2",
            MetricKind::TokenAccuracy => "token_accuracy",
            MetricKind::Jaccard => "jaccard",
        }
    }

    pub fn higher_is_better(self) -> bool {
        matches!(
            self,
            MetricKind::Accuracy | MetricKind::R2 | MetricKind::TokenAccuracy | MetricKind::Jaccard
        )
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetricKind {
    type Err = FeatureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| FeatureError::Registry {
                kind: "metric",
                name: s.to_string(),
                available: Self::ALL.iter().map(|k| k.name().to_string()).collect(),
            })
    }
}

/// Metrics defined for output features of `ftype`.
pub fn metrics_for_type(ftype: FeatureType) -> &'static [MetricKind] {
    match ftype {
        FeatureType::Category => &[MetricKind::Accuracy, MetricKind::CrossEntropy],
        FeatureType::Binary => &[MetricKind::Accuracy],
        FeatureType::Numerical => &[MetricKind::Mse, MetricKind::Mae, MetricKind::R2],
        FeatureType::Sequence | FeatureType::Text => &[MetricKind::TokenAccuracy],
        FeatureType::Set => &[MetricKind::Jaccard],
        FeatureType::Vector => &[],
    }
}

fn numbers(values: impl Iterator<Item = impl AsRef<str>>) -> Result<Vec<f64>, FeatureError> {
    values
        .enumerate()
        .map(|(i, v)| parse_number(v.as_ref()).map_err(|e| e.with_context(format!("row {}", i + 1))))
        .collect()
}

fn mean(values: impl Iterator<Item = f64>, n: usize) -> f64 {
    values.sum::<f64>() / n as f64
}

/// Scores raw-space predictions against raw ground truth.
pub fn compute_metric(
    kind: MetricKind,
    ftype: FeatureType,
    truths: &[String],
    preds: &[Prediction],
) -> Result<f64, FeatureError> {
    if !metrics_for_type(ftype).contains(&kind) {
        return Err(FeatureError::Registry {
            kind: "metric",
            name: format!("{kind} for {ftype}"),
            available: metrics_for_type(ftype).iter().map(|k| k.name().to_string()).collect(),
        });
    }
    if truths.len() != preds.len() {
        return Err(FeatureError::Contract(format!(
            "metric {kind}: {} ground-truth values but {} predictions",
            truths.len(),
            preds.len()
        )));
    }
    let n = truths.len();
    if n == 0 {
        return Err(FeatureError::Contract(format!("metric {kind} over zero rows")));
    }
    let score = match kind {
        MetricKind::Accuracy => {
            let mut correct = 0usize;
            for (t, p) in truths.iter().zip(preds) {
                let hit = if ftype == FeatureType::Binary {
                    parse_binary(t)? == parse_binary(&p.value)?
                } else {
                    t.trim() == p.value
                };
                correct += usize::from(hit);
            }
            correct as f64 / n as f64
        }
        MetricKind::CrossEntropy => {
            let mut total = 0.0;
            for (t, p) in truths.iter().zip(preds) {
                let lookup = |token: &str| p.probabilities.iter().find(|(k, _)| k == token).map(|(_, v)| *v);
                let prob = lookup(t.trim())
                    .or_else(|| lookup(UNK))
                    .ok_or_else(|| FeatureError::Contract("cross_entropy needs class probabilities".into()))?;
                total -= prob.max(1e-15).ln();
            }
            total / n as f64
        }
        MetricKind::Mse | MetricKind::Mae | MetricKind::R2 => {
            let y = numbers(truths.iter())?;
            let yhat = numbers(preds.iter().map(|p| &p.value))?;
            let residuals = y.iter().zip(&yhat).map(|(a, b)| a - b);
            match kind {
                MetricKind::Mse => mean(residuals.map(|r| r * r), n),
                MetricKind::Mae => mean(residuals.map(f64::abs), n),
                _ => {
                    let y_mean = mean(y.iter().copied(), n);
                    let ss_tot: f64 = y.iter().map(|v| (v - y_mean).powi(2)).sum();
                    let ss_res: f64 = residuals.map(|r| r * r).sum();
                    if ss_tot == 0.0 {
                        0.0
                    } else {
                        1.0 - ss_res / ss_tot
                    }
                }
            }
        }
        MetricKind::TokenAccuracy => {
            let (mut correct, mut total) = (0usize, 0usize);
            for (t, p) in truths.iter().zip(preds) {
                let predicted: Vec<&str> = p.value.split_whitespace().collect();
                for (i, tok) in t.split_whitespace().enumerate() {
                    total += 1;
                    correct += usize::from(predicted.get(i) == Some(&tok));
                }
            }
            if total == 0 {
                1.0
            } else {
                correct as f64 / total as f64
            }
        }
        MetricKind::Jaccard => mean(
            truths.iter().zip(preds).map(|(t, p)| {
                let a: BTreeSet<&str> = t.split_whitespace().collect();
                let b: BTreeSet<&str> = p.value.split_whitespace().collect();
                let union = a.union(&b).count();
                if union == 0 {
                    1.0
                } else {
                    a.intersection(&b).count() as f64 / union as f64
                }
            }),
            n,
        ),
    };
    Ok(score)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    fn p(v: &[&str]) -> Vec<Prediction> {
        v.iter().map(|x| Prediction::from_value(*x)).collect()
    }

    #[test]
    fn perfect_accuracy() {
        let t = s(&["a", "b", "c"]);
        let acc = compute_metric(MetricKind::Accuracy, FeatureType::Category, &t, &p(&["a", "b", "c"])).unwrap();
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn binary_accuracy_compares_parsed_values() {
        let acc = compute_metric(MetricKind::Accuracy, FeatureType::Binary, &s(&["1", "no"]), &p(&["yes", "false"])).unwrap();
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn r2_of_mean_predictor_is_zero() {
        let t = s(&["1", "2", "6"]);
        let r2 = compute_metric(MetricKind::R2, FeatureType::Numerical, &t, &p(&["3", "3", "3"])).unwrap();
        assert_eq!(r2, 0.0);
        let constant = compute_metric(MetricKind::R2, FeatureType::Numerical, &s(&["2", "2"]), &p(&["1", "5"])).unwrap();
        assert_eq!(constant, 0.0);
    }

    #[test]
    fn mae_example() {
        let mae = compute_metric(MetricKind::Mae, FeatureType::Numerical, &s(&["1", "2"]), &p(&["2", "4"])).unwrap();
        assert_eq!(mae, 1.5);
    }

    #[test]
    fn token_accuracy_ignores_padding_positions() {
        let acc = compute_metric(
            MetricKind::TokenAccuracy,
            FeatureType::Sequence,
            &s(&["N V", "D N V"]),
            &p(&["N V D", "D V"]),
        )
        .unwrap();
        assert_eq!(acc, 3.0 / 5.0);
    }

    #[test]
    fn jaccard_rows() {
        let j = compute_metric(MetricKind::Jaccard, FeatureType::Set, &s(&["a b", ""]), &p(&["b c", ""])).unwrap();
        assert!((j - (1.0 / 3.0 + 1.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_uses_truth_probability() {
        let pred = Prediction {
            value: "x".into(),
            probabilities: vec![(UNK.into(), 0.1), ("x".into(), 0.6), ("y".into(), 0.3)],
        };
        let ce = compute_metric(MetricKind::CrossEntropy, FeatureType::Category, &s(&["y"]), &[pred]).unwrap();
        assert!((ce + 0.3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            compute_metric(MetricKind::Accuracy, FeatureType::Category, &s(&["a"]), &p(&["a", "b"])),
            Err(FeatureError::Contract(_))
        ));
        assert!(matches!(
            compute_metric(MetricKind::Mse, FeatureType::Category, &s(&["a"]), &p(&["a"])),
            Err(FeatureError::Registry { .. })
        ));
    }
}
