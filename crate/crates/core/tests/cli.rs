mod common;

use common::*;

fn s(p: &std::path::Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn train_populates_model_directory() {
    let dir = tempfile::tempdir().unwrap();
    let (config, data) = text_setup(dir.path(), 60, 2);
    let out = dir.path().join("run");
    let o = run(&["train", "-c", s(&config), "-d", s(&data), "-o", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in ["model/metadata.json", "model/model_definition.yaml", "model/weights.bin", "training_stats.json"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    // one progress line per epoch
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("epoch")).count(), 2);
}

#[test]
fn missing_dataset_flag_is_usage_error() {
    let o = run(&["train", "-c", s(&fixture("wordcnn.yaml"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"));
}

#[test]
fn unknown_subcommand_is_usage_error() {
    assert_eq!(run(&["fit"]).status.code(), Some(1));
    assert_eq!(run(&[]).status.code(), Some(1));
}

#[test]
fn help_exits_zero() {
    let o = run(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("experiment"));
}

#[test]
fn unknown_encoder_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let (_, data) = text_setup(dir.path(), 20, 1);
    let bad = write(
        &dir.path().join("bad.yaml"),
        "input_features:\n  - name: text\n    type: text\n    encoder: transformer\noutput_features:\n  - name: class\n    type: category\n",
    );
    let o = run(&["train", "-c", s(&bad), "-d", s(&data), "-o", s(&dir.path().join("r"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("transformer"), "{}", stderr(&o));
}

#[test]
fn every_diagnostic_is_printed() {
    let dir = tempfile::tempdir().unwrap();
    let (_, data) = text_setup(dir.path(), 20, 1);
    let bad = write(
        &dir.path().join("bad.yaml"),
        "input_features:\n  - name: nope\n    type: text\n    encoder: transformer\noutput_features:\n  - name: class\n    type: category\n",
    );
    let o = run(&["train", "-c", s(&bad), "-d", s(&data), "-o", s(&dir.path().join("r"))]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("nope") && err.contains("transformer"), "{err}");
}

#[test]
fn malformed_yaml_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let (_, data) = text_setup(dir.path(), 20, 1);
    let bad = write(&dir.path().join("bad.yaml"), "input_features: [\n");
    let o = run(&["train", "-c", s(&bad), "-d", s(&data)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_dataset_file_is_data_error() {
    let o = run(&["train", "-c", s(&fixture("wordcnn.yaml")), "-d", "/nonexistent/data.csv"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn nonexistent_model_dir_is_artifact_error() {
    let dir = tempfile::tempdir().unwrap();
    let (_, data) = text_setup(dir.path(), 20, 1);
    let o = run(&["predict", "-m", s(&dir.path().join("missing")), "-d", s(&data), "-o", s(&dir.path().join("p"))]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn non_finite_loss_is_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("big.csv");
    let rows: Vec<Vec<String>> = (0..40)
        .map(|i| vec![format!("{}", i as f64), format!("{:e}", if i % 2 == 0 { 1e300 } else { -1e300 })])
        .collect();
    write_csv(&data, &["x", "y"], &rows);
    let config = write(
        &dir.path().join("c.yaml"),
        "input_features:\n  - name: x\n    type: numerical\noutput_features:\n  - name: y\n    type: numerical\n\
         preprocessing:\n  numerical:\n    normalization: none\ntraining:\n  epochs: 3\n",
    );
    let o = run(&["train", "-c", s(&config), "-d", s(&data), "-o", s(&dir.path().join("r"))]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(stderr(&o).contains("non-finite"), "{}", stderr(&o));
}

#[test]
fn predict_writes_one_row_per_input_and_metrics_with_targets() {
    let dir = tempfile::tempdir().unwrap();
    let (config, data) = text_setup(dir.path(), 50, 2);
    let run_dir = dir.path().join("run");
    assert_eq!(run(&["train", "-q", "-c", s(&config), "-d", s(&data), "-o", s(&run_dir)]).status.code(), Some(0));

    let pred = dir.path().join("pred");
    let o = run(&["predict", "-m", s(&run_dir.join("model")), "-d", s(&data), "-o", s(&pred)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let mut r = csv::Reader::from_path(pred.join("predictions.csv")).unwrap();
    assert_eq!(r.records().count(), 50);
    let metrics = read_json(&pred.join("metrics.json"));
    assert!(metrics["class"]["accuracy"].is_number());
}

#[test]
fn predict_without_targets_skips_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let (config, data) = text_setup(dir.path(), 40, 1);
    let run_dir = dir.path().join("run");
    assert_eq!(run(&["train", "-q", "-c", s(&config), "-d", s(&data), "-o", s(&run_dir)]).status.code(), Some(0));

    let inputs = dir.path().join("inputs.csv");
    let rows: Vec<Vec<String>> = keyword_text(15, 3).into_iter().map(|r| vec![r[0].clone()]).collect();
    write_csv(&inputs, &["text"], &rows);
    let pred = dir.path().join("pred");
    // a run directory is accepted in place of its model/ subdirectory
    let o = run(&["predict", "-m", s(&run_dir), "-d", s(&inputs), "-o", s(&pred)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(pred.join("predictions.csv").is_file());
    assert!(!pred.join("metrics.json").exists());
}

#[test]
fn predict_missing_input_column_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let (config, data) = text_setup(dir.path(), 30, 1);
    let run_dir = dir.path().join("run");
    assert_eq!(run(&["train", "-q", "-c", s(&config), "-d", s(&data), "-o", s(&run_dir)]).status.code(), Some(0));
    let other = dir.path().join("other.csv");
    write_csv(&other, &["class"], &[vec!["pos".into()]]);
    let o = run(&["predict", "-m", s(&run_dir), "-d", s(&other), "-o", s(&dir.path().join("p"))]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn quiet_suppresses_progress_not_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let (config, data) = text_setup(dir.path(), 40, 2);
    let o = run(&["train", "-q", "-c", s(&config), "-d", s(&data), "-o", s(&dir.path().join("r"))]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).is_empty(), "{}", stdout(&o));

    // corrupt the cache: the warning still reaches stderr under --quiet
    std::fs::write(dir.path().join("text.csv.ecdc"), b"ECDC garbage").unwrap();
    let o = run(&["train", "-q", "-c", s(&config), "-d", s(&data), "-o", s(&dir.path().join("r2"))]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).is_empty());
    assert!(stderr(&o).contains("warning"), "{}", stderr(&o));
}

#[test]
fn dataset_file_is_not_modified() {
    let dir = tempfile::tempdir().unwrap();
    let (config, data) = text_setup(dir.path(), 40, 1);
    let before = std::fs::read(&data).unwrap();
    let run_dir = dir.path().join("run");
    run(&["experiment", "-q", "-c", s(&config), "-d", s(&data), "-o", s(&run_dir)]);
    run(&["predict", "-m", s(&run_dir), "-d", s(&data), "-o", s(&dir.path().join("p"))]);
    assert_eq!(std::fs::read(&data).unwrap(), before);
}

#[test]
fn experiment_reports_three_splits_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let (config, data) = text_setup(dir.path(), 80, 2);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = run(&["experiment", "-q", "--seed", "5", "-c", s(&config), "-d", s(&data), "-o", s(out)]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let m = read_json(&a.join("metrics.json"));
    for split in ["train", "validation", "test"] {
        assert!(m[split]["class"]["accuracy"].is_number(), "{split}");
    }
    assert_eq!(
        std::fs::read(a.join("metrics.json")).unwrap(),
        std::fs::read(b.join("metrics.json")).unwrap()
    );
}

#[test]
fn seed_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let (config, data) = text_setup(dir.path(), 40, 1);
    let out = dir.path().join("r");
    let o = std::process::Command::new(BIN)
        .args(["train", "-q", "-c", s(&config), "-d", s(&data), "-o", s(&out)])
        .env("ECD_SEED", "1234")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    let def = std::fs::read_to_string(out.join("model/model_definition.yaml")).unwrap();
    assert!(def.contains("seed: 1234"), "{def}");
}

#[test]
fn default_output_dir_under_results() {
    let dir = tempfile::tempdir().unwrap();
    let (config, data) = text_setup(dir.path(), 30, 1);
    let o = std::process::Command::new(BIN)
        .args(["train", "-q", "-c", s(&config), "-d", s(&data)])
        .current_dir(dir.path())
        .env_remove("ECD_SEED")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let runs: Vec<_> = std::fs::read_dir(dir.path().join("results")).unwrap().collect();
    assert_eq!(runs.len(), 1);
    let name = runs[0].as_ref().unwrap().file_name().into_string().unwrap();
    assert!(name.starts_with("run_"), "{name}");
}
