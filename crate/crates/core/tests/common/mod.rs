//! Synthetic datasets and helpers shared by the integration tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ecd::autodiff::{seeded_rng, ModelRng};
use rand::seq::IndexedRandom;
use rand::RngExt;

pub const BIN: &str = env!("CARGO_BIN_EXE_ecd");

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("ECD_SEED").output().expect("binary runs")
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Writes `header` and `rows` as CSV, quoting every cell.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) {
    let mut w = csv::WriterBuilder::new()
        .quote_style(csv::QuoteStyle::Always)
        .from_path(path)
        .unwrap();
    w.write_record(header).unwrap();
    for r in rows {
        w.write_record(r).unwrap();
    }
    w.flush().unwrap();
}

pub fn write(path: &Path, text: &str) -> PathBuf {
    std::fs::write(path, text).unwrap();
    path.to_path_buf()
}

pub fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))).unwrap()
}

pub const KEYWORD: &str = "excellent";

fn filler(rng: &mut ModelRng, n: usize) -> Vec<String> {
    (0..n).map(|_| format!("w{}", rng.random_range(0..40))).collect()
}

/// `text,class`: class is `pos` exactly when the keyword occurs.
pub fn keyword_text(n: usize, seed: u64) -> Vec<Vec<String>> {
    let mut rng = seeded_rng(seed);
    (0..n)
        .map(|i| {
            let len = rng.random_range(4..=10);
            let mut words = filler(&mut rng, len);
            let pos = i % 2 == 0;
            if pos {
                let at = rng.random_range(0..=words.len());
                words.insert(at, KEYWORD.to_string());
            }
            vec![words.join(" "), if pos { "pos" } else { "neg" }.to_string()]
        })
        .collect()
}

pub const LINEAR_WEIGHTS: [f64; 4] = [1.5, -2.0, 0.75, 1.0];

/// `x1..x4,label`: label is `yes` when `w·x > 0`. Points within 0.1 of
/// the boundary are resampled so the classes have a margin.
pub fn linear_rows(n: usize, seed: u64) -> Vec<Vec<String>> {
    let mut rng = seeded_rng(seed);
    let mut rows = Vec::with_capacity(n);
    while rows.len() < n {
        let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s: f64 = x.iter().zip(LINEAR_WEIGHTS).map(|(a, w)| a * w).sum();
        if s.abs() < 0.1 {
            continue;
        }
        let mut row: Vec<String> = x.iter().map(|v| format!("{v:.6}")).collect();
        row.push(if s > 0.0 { "yes" } else { "no" }.to_string());
        rows.push(row);
    }
    rows
}

pub fn tag_of(token: &str) -> String {
    let id: usize = token[1..].parse().unwrap();
    ["N", "V", "A", "D"][id % 4].to_string()
}

/// `tokens,tags`: each token's tag is a fixed function of the token.
pub fn tagging_rows(n: usize, seed: u64) -> Vec<Vec<String>> {
    let mut rng = seeded_rng(seed);
    let vocab: Vec<String> = (0..16).map(|i| format!("t{i}")).collect();
    (0..n)
        .map(|_| {
            let len = rng.random_range(3..=8);
            let toks: Vec<&String> = (0..len).map(|_| vocab.choose(&mut rng).unwrap()).collect();
            let tags: Vec<String> = toks.iter().map(|t| tag_of(t)).collect();
            vec![
                toks.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(" "),
                tags.join(" "),
            ]
        })
        .collect()
}

/// `x1,x2,a,b`: `a` is the quadrant of `(x1, x2)` and `b` is whether the
/// quadrant index is even, an exact function of `a` that is not linear in
/// the inputs.
pub fn quadrant_rows(n: usize, seed: u64) -> Vec<Vec<String>> {
    let mut rng = seeded_rng(seed);
    let mut rows = Vec::with_capacity(n);
    while rows.len() < n {
        let (x1, x2): (f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        if x1.abs() < 0.05 || x2.abs() < 0.05 {
            continue;
        }
        let q = match (x1 > 0.0, x2 > 0.0) {
            (true, true) => 0,
            (false, true) => 1,
            (false, false) => 2,
            (true, false) => 3,
        };
        rows.push(vec![
            format!("{x1:.6}"),
            format!("{x2:.6}"),
            format!("q{q}"),
            if q % 2 == 0 { "even" } else { "odd" }.to_string(),
        ]);
    }
    rows
}

/// Writes a keyword-text dataset and a minimal text config into `dir`.
pub fn text_setup(dir: &Path, rows: usize, epochs: usize) -> (PathBuf, PathBuf) {
    let data = dir.join("text.csv");
    write_csv(&data, &["text", "class"], &keyword_text(rows, 7));
    let config = write(
        &dir.join("config.yaml"),
        &format!(
            "input_features:\n  - name: text\n    type: text\n    encoder: cnn\n\
             output_features:\n  - name: class\n    type: category\n\
             training:\n  epochs: {epochs}\n  batch_size: 32\n"
        ),
    );
    (config, data)
}
