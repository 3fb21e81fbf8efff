use std::collections::BTreeSet;

use super::{Diagnostic, ModelDefinition, Params, Registries, SplitPolicy, TrainingParams};
use crate::features::{FeatureType, PreprocParams};
use crate::model::{build_dependency_order, DagError, DecoderNode, TAGGER};

fn check_keywords(
    diags: &mut Vec<Diagnostic>,
    path: &str,
    params: &Params,
    accepts: impl Fn(&str) -> bool,
    accepted: impl Fn() -> Vec<String>,
    component: &str,
) {
    for key in params.keys().filter(|k| !accepts(k)) {
        diags.push(Diagnostic::new(
            format!("{path}.{key}"),
            format!(
                "`{key}` is not a parameter of {component}; accepted: {}",
                accepted().join(", ")
            ),
        ));
    }
}

fn check_preprocessing(diags: &mut Vec<Diagnostic>, path: &str, ftype: FeatureType, p: &PreprocParams) {
    if let Err(msg) = p.validate(ftype) {
        diags.push(Diagnostic::new(path, msg));
    }
}

/// Checks a resolved definition against a dataset header and the
/// registries. All findings are collected; an empty list means valid.
pub fn validate(def: &ModelDefinition, header: &[String], registries: &Registries) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    let columns: BTreeSet<&str> = header.iter().map(String::as_str).collect();

    let mut seen = BTreeSet::new();
    let named = def
        .input_features
        .iter()
        .enumerate()
        .map(|(i, f)| (format!("input_features[{i}]"), f.name.as_str()))
        .chain(
            def.output_features
                .iter()
                .enumerate()
                .map(|(i, f)| (format!("output_features[{i}]"), f.name.as_str())),
        );
    for (path, name) in named {
        if name.trim().is_empty() {
            diags.push(Diagnostic::new(format!("{path}.name"), "feature name is empty"));
            continue;
        }
        if !seen.insert(name) {
            diags.push(Diagnostic::new(
                format!("{path}.name"),
                format!("feature name `{name}` is declared more than once"),
            ));
        }
        if !columns.contains(name) {
            diags.push(Diagnostic::new(
                format!("{path}.name"),
                format!("column `{name}` is not in the dataset header"),
            ));
        }
    }

    for (ftype, overrides) in &def.preprocessing {
        check_preprocessing(&mut diags, &format!("preprocessing.{ftype}"), *ftype, &overrides.complete(*ftype));
    }

    let sequential_inputs: Vec<&str> = def
        .input_features
        .iter()
        .filter(|f| f.ftype.is_sequential())
        .map(|f| f.name.as_str())
        .collect();

    for (i, f) in def.input_features.iter().enumerate() {
        let path = format!("input_features[{i}]");
        let encoder = f.encoder.as_deref().unwrap_or_else(|| crate::model::default_encoder(f.ftype));
        match registries.encoders.get(Some(f.ftype), encoder) {
            Ok(entry) => check_keywords(
                &mut diags,
                &path,
                &f.params,
                |k| entry.accepts(k),
                || entry.defaults.keys().cloned().collect(),
                &format!("encoder `{encoder}`"),
            ),
            Err(e) => diags.push(Diagnostic::new(format!("{path}.encoder"), e.to_string())),
        }
        check_preprocessing(
            &mut diags,
            &format!("{path}.preprocessing"),
            f.ftype,
            &def.preprocessing_for(f.ftype, f.preprocessing.as_ref()),
        );
    }

    let combiner = def.combiner.clone().unwrap_or_default();
    let kind = combiner.kind.as_deref().unwrap_or(crate::model::DEFAULT_COMBINER);
    match registries.combiners.get(None, kind) {
        Ok(entry) => check_keywords(
            &mut diags,
            "combiner",
            &combiner.params,
            |k| entry.accepts(k),
            || entry.defaults.keys().cloned().collect(),
            &format!("combiner `{kind}`"),
        ),
        Err(e) => diags.push(Diagnostic::new("combiner.type", e.to_string())),
    }

    let outputs: BTreeSet<&str> = def.output_features.iter().map(|f| f.name.as_str()).collect();
    for (i, f) in def.output_features.iter().enumerate() {
        let path = format!("output_features[{i}]");
        let decoder = f
            .decoder
            .as_deref()
            .or_else(|| crate::model::default_decoder(f.ftype));
        match decoder {
            None => diags.push(Diagnostic::new(
                format!("{path}.type"),
                format!("{} features cannot be outputs: no decoder is registered", f.ftype),
            )),
            Some(decoder) => match registries.decoders.get(Some(f.ftype), decoder) {
                Ok(entry) => check_keywords(
                    &mut diags,
                    &path,
                    &f.params,
                    |k| entry.accepts(k),
                    || entry.defaults.keys().cloned().collect(),
                    &format!("decoder `{decoder}`"),
                ),
                Err(e) => diags.push(Diagnostic::new(format!("{path}.decoder"), e.to_string())),
            },
        }
        if let Some(loss) = &f.loss {
            if let Some(kind) = &loss.kind {
                if let Err(e) = registries.losses.get(Some(f.ftype), kind) {
                    diags.push(Diagnostic::new(format!("{path}.loss.type"), e.to_string()));
                }
            }
            if let Some(w) = loss.weight {
                if !(w > 0.0 && w.is_finite()) {
                    diags.push(Diagnostic::new(
                        format!("{path}.loss.weight"),
                        format!("loss weight must be positive, got {w}"),
                    ));
                }
            }
        }
        for dep in &f.dependencies {
            if dep == &f.name {
                diags.push(Diagnostic::new(
                    format!("{path}.dependencies"),
                    format!("`{}` depends on itself", f.name),
                ));
            } else if !outputs.contains(dep.as_str()) {
                diags.push(Diagnostic::new(
                    format!("{path}.dependencies"),
                    format!("`{}` depends on `{dep}`, which is not a declared output feature", f.name),
                ));
            } else if def.output(dep).is_some_and(|o| o.ftype.is_sequential()) {
                diags.push(Diagnostic::new(
                    format!("{path}.dependencies"),
                    format!("`{}` depends on sequence output `{dep}`; sequence outputs cannot be dependency origins", f.name),
                ));
            }
        }
        if decoder == Some(TAGGER) {
            if !f.dependencies.is_empty() {
                diags.push(Diagnostic::new(
                    format!("{path}.dependencies"),
                    "the tagger decoder does not accept dependencies",
                ));
            }
            match sequential_inputs.len() {
                0 => diags.push(Diagnostic::new(
                    format!("{path}.decoder"),
                    "the tagger decoder needs a sequence or text input feature",
                )),
                1 => {}
                _ => diags.push(Diagnostic::new(
                    format!("{path}.decoder"),
                    format!(
                        "the tagger decoder needs exactly one sequence or text input, found {}",
                        sequential_inputs.join(", ")
                    ),
                )),
            }
        }
        check_preprocessing(
            &mut diags,
            &format!("{path}.preprocessing"),
            f.ftype,
            &def.preprocessing_for(f.ftype, f.preprocessing.as_ref()),
        );
    }

    let nodes: Vec<DecoderNode> = def
        .output_features
        .iter()
        .map(|f| DecoderNode {
            name: f.name.clone(),
            dependencies: f.dependencies.clone(),
        })
        .collect();
    if let Err(DagError::Cycle(names)) = build_dependency_order(&nodes) {
        diags.push(Diagnostic::new(
            "output_features",
            format!("dependency cycle among {}", names.join(" -> ")),
        ));
    }

    let t = TrainingParams::from_definition(def);
    if t.batch_size == 0 {
        diags.push(Diagnostic::new("training.batch_size", "batch_size must be at least 1"));
    }
    if let Err(e) = t.optimizer.validate() {
        diags.push(Diagnostic::new("training.optimizer", e.to_string()));
    }
    if !(t.learning_rate_decay > 0.0 && t.learning_rate_decay <= 1.0) {
        diags.push(Diagnostic::new(
            "training.learning_rate_decay",
            format!("decay must be in (0, 1], got {}", t.learning_rate_decay),
        ));
    }
    match &t.split {
        SplitPolicy::Random {
            train,
            validation,
            test,
        } => {
            if [train, validation, test].iter().any(|f| !(**f > 0.0)) {
                diags.push(Diagnostic::new("training.split", "split fractions must be positive"));
            }
            if (train + validation + test - 1.0).abs() > 1e-9 {
                diags.push(Diagnostic::new(
                    "training.split",
                    format!("split fractions sum to {}, not 1", train + validation + test),
                ));
            }
        }
        SplitPolicy::Column(c) => {
            if !columns.contains(c.as_str()) {
                diags.push(Diagnostic::new(
                    "training.split.column",
                    format!("split column `{c}` is not in the dataset header"),
                ));
            }
        }
    }
    match def.output(&t.validation_field) {
        None => diags.push(Diagnostic::new(
            "training.validation_field",
            format!("`{}` is not an output feature", t.validation_field),
        )),
        Some(f) if t.validation_metric != "loss" => {
            if let Err(e) = registries.metrics.get(Some(f.ftype), &t.validation_metric) {
                diags.push(Diagnostic::new("training.validation_metric", e.to_string()));
            }
        }
        Some(_) => {}
    }
    diags
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{parse_model_definition, resolve_defaults};

    const MINIMAL: &str = "input_features:\n  - name: text\n    type: text\noutput_features:\n  - name: class\n    type: category\n";

    fn header(cols: &[&str]) -> Vec<String> {
        cols.iter().map(|s| s.to_string()).collect()
    }

    fn check(text: &str, cols: &[&str]) -> Vec<Diagnostic> {
        let reg = Registries::builtin();
        let def = resolve_defaults(&parse_model_definition(text).unwrap(), &reg);
        validate(&def, &header(cols), &reg)
    }

    #[test]
    fn minimal_is_clean() {
        assert_eq!(check(MINIMAL, &["text", "class"]), vec![]);
    }

    #[test]
    fn misspelled_encoder_lists_registered() {
        let d = check(&MINIMAL.replace("type: text\n", "type: text\n    encoder: rrn\n"), &["text", "class"]);
        assert_eq!(d.len(), 1, "{d:?}");
        assert_eq!(d[0].path, "input_features[0].encoder");
        for name in ["embed", "rnn", "cnn"] {
            assert!(d[0].message.contains(name), "{}", d[0].message);
        }
    }

    #[test]
    fn missing_column_named() {
        let d = check(MINIMAL, &["text"]);
        assert_eq!(d.len(), 1);
        assert!(d[0].message.contains("`class`"));
    }

    #[test]
    fn undeclared_dependency_names_both() {
        let text = format!("{MINIMAL}    dependencies: [ghost]\n");
        let d = check(&text, &["text", "class"]);
        assert_eq!(d.len(), 1, "{d:?}");
        assert!(d[0].message.contains("class") && d[0].message.contains("ghost"));
    }

    #[test]
    fn unknown_hyperparameter_rejected() {
        let text = MINIMAL.replace("type: text\n", "type: text\n    encoder: rnn\n    stat_size: 4\n");
        let d = check(&text, &["text", "class"]);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].path, "input_features[0].stat_size");
    }

    #[test]
    fn collects_all_diagnostics() {
        let text = "input_features:\n  - name: a\n    type: text\n    encoder: nope\noutput_features:\n  - name: b\n    type: category\n    dependencies: [c]\n    loss:\n      type: mse\n  - name: c\n    type: category\n    dependencies: [b]\ntraining:\n  batch_size: 0\n";
        let d = check(text, &["a", "b"]);
        let paths: Vec<&str> = d.iter().map(|d| d.path.as_str()).collect();
        assert!(paths.contains(&"input_features[0].encoder"));
        assert!(paths.contains(&"output_features[1].name"));
        assert!(paths.contains(&"output_features[0].loss.type"));
        assert!(paths.contains(&"output_features"));
        assert!(paths.contains(&"training.batch_size"));
    }

    #[test]
    fn tagger_needs_single_sequence_input() {
        let text = "input_features:\n  - name: x\n    type: numerical\noutput_features:\n  - name: tags\n    type: sequence\n    decoder: tagger\n";
        let d = check(text, &["x", "tags"]);
        assert_eq!(d.len(), 1);
        assert!(d[0].message.contains("sequence or text input"));
    }

    #[test]
    fn split_fractions_must_sum_to_one() {
        let text = format!("{MINIMAL}training:\n  split:\n    train: 0.5\n    validation: 0.1\n    test: 0.1\n");
        let d = check(&text, &["text", "class"]);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].path, "training.split");
    }

    #[test]
    fn vector_output_has_no_decoder() {
        let text = MINIMAL.replace("type: category", "type: vector");
        let d = check(&text, &["text", "class"]);
        assert!(d.iter().any(|d| d.message.contains("no decoder")));
    }

    #[test]
    fn validation_metric_checked_against_type() {
        let ok = check(&format!("{MINIMAL}training:\n  validation_metric: accuracy\n"), &["text", "class"]);
        assert!(ok.is_empty());
        let bad = check(&format!("{MINIMAL}training:\n  validation_metric: r2\n"), &["text", "class"]);
        assert_eq!(bad.len(), 1);
    }

    #[test]
    fn bad_preprocessing_reported() {
        let text = format!("{MINIMAL}preprocessing:\n  text:\n    normalization: zscore\n");
        let d = check(&text, &["text", "class"]);
        assert!(d.iter().any(|d| d.path == "preprocessing.text"));
    }
}
