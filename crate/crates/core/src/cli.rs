//! Command-line front end: `train`, `predict` and `experiment`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::parse_model_definition;
use crate::pipeline::{
    experiment, load_dataset, predict, train, ConsoleReporter, PipelineError, TrainOptions, METRICS_FILE,
    MODEL_SUBDIR, PREDICTIONS_FILE,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;

#[derive(Debug, Parser)]
#[command(name = "ecd", version, about = "Train and use encoder-combiner-decoder models from a YAML definition")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and save it under the output directory.
    Train(TrainArgs),
    /// Predict a dataset with a trained model.
    Predict(PredictArgs),
    /// Train, then evaluate on the train, validation and test splits.
    Experiment(TrainArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Model definition (YAML).
    #[arg(short, long)]
    pub config: PathBuf,
    /// Training data (CSV with a header row).
    #[arg(short, long)]
    pub dataset: PathBuf,
    /// Run directory; defaults to ./results/run_<timestamp>.
    #[arg(short, long)]
    pub output_dir: Option<PathBuf>,
    /// Overrides training.seed in the definition.
    #[arg(long, env = "ECD_SEED")]
    pub seed: Option<u64>,
    /// Neither read nor write the preprocessing cache.
    #[arg(long)]
    pub no_cache: bool,
    /// Suppress progress output.
    #[arg(short, long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Model directory, or a run directory containing model/.
    #[arg(short, long)]
    pub model_dir: PathBuf,
    /// Data to predict (CSV with a header row).
    #[arg(short, long)]
    pub dataset: PathBuf,
    /// Run directory; defaults to ./results/run_<timestamp>.
    #[arg(short, long)]
    pub output_dir: Option<PathBuf>,
    /// Suppress progress output.
    #[arg(short, long)]
    pub quiet: bool,
}

fn default_output_dir() -> PathBuf {
    let stamp = chrono::Local::now().format("%Y%m%d_%H%M%S");
    let base = PathBuf::from("results").join(format!("run_{stamp}"));
    let mut dir = base.clone();
    let mut n = 1;
    while dir.exists() {
        dir = PathBuf::from(format!("{}_{n}", base.display()));
        n += 1;
    }
    dir
}

fn read_config(path: &Path) -> Result<crate::config::ModelDefinition, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        PipelineError::Config(vec![crate::config::Diagnostic::new(
            path.display().to_string(),
            format!("cannot read model definition: {e}"),
        )])
    })?;
    Ok(parse_model_definition(&text)?)
}

fn run_train(args: &TrainArgs, with_test: bool) -> Result<(), PipelineError> {
    let def = read_config(&args.config)?;
    let dataset = load_dataset(&args.dataset)?;
    let output_dir = args.output_dir.clone().unwrap_or_else(default_output_dir);
    let opts = TrainOptions {
        output_dir: output_dir.clone(),
        seed: args.seed,
        use_cache: !args.no_cache,
    };
    let mut reporter = ConsoleReporter { quiet: args.quiet };
    std::fs::create_dir_all(&output_dir)
        .map_err(|e| PipelineError::Artifact(format!("cannot create {}: {e}", output_dir.display())))?;
    if with_test {
        let (_, report) = experiment(&def, &dataset, &opts, &mut reporter)?;
        if !args.quiet {
            for (split, features) in &report {
                for (feature, metrics) in features {
                    let line: Vec<String> = metrics.iter().map(|(k, v)| format!("{k} {v:.6}")).collect();
                    println!("{split:<10} {feature}: {}", line.join("  "));
                }
            }
            println!("metrics written to {}", output_dir.join(METRICS_FILE).display());
        }
    } else {
        train(&def, &dataset, &opts, &mut reporter)?;
    }
    if !args.quiet {
        println!("model saved to {}", output_dir.join(MODEL_SUBDIR).display());
    }
    Ok(())
}

fn run_predict(args: &PredictArgs) -> Result<(), PipelineError> {
    if !args.model_dir.is_dir() {
        return Err(PipelineError::Artifact(format!(
            "model directory {} does not exist",
            args.model_dir.display()
        )));
    }
    let dataset = load_dataset(&args.dataset)?;
    let output_dir = args.output_dir.clone().unwrap_or_else(default_output_dir);
    let result = predict(&args.model_dir, &dataset, &output_dir)?;
    if !args.quiet {
        println!(
            "{} predictions written to {}",
            dataset.len(),
            output_dir.join(PREDICTIONS_FILE).display()
        );
        if result.metrics.is_some() {
            println!("metrics written to {}", output_dir.join(METRICS_FILE).display());
        }
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Train(a) => run_train(a, false),
        Command::Experiment(a) => run_train(a, true),
        Command::Predict(a) => run_predict(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
