//! `survkit` pipeline driver. Each subcommand reads its predecessor's output
//! directory and writes data files plus the `RunConfig` that produced them.

mod data;
mod explain;
mod fsio;
mod model;
mod select;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

pub use fsio::{CliError, ErrorKind};

#[derive(Debug, Clone, Parser, Serialize)]
#[command(name = "survkit", version, about = "Explainable survival-analysis pipeline")]
pub struct Cli {
    /// Seed for every random stage.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize)]
#[serde(tag = "command", rename_all = "lowercase")]
pub enum Command {
    /// Generate a synthetic cohort with known ground truth.
    Synth(SynthArgs),
    /// Drop sparse features and incomplete samples, split, normalize, impute.
    Preprocess(PreprocessArgs),
    /// Filter ensemble, intersection, priors and forward selection.
    Select(SelectArgs),
    /// TPE hyperparameter search over stratified k-fold CV.
    Tune(TuneArgs),
    /// Fit the final model and write a self-contained artifact.
    Train(TrainArgs),
    /// Table-1 report, AUC curve and risk-group survival exports.
    Evaluate(EvaluateArgs),
    /// SHAP explanations, global importance, thresholds and waterfalls.
    Explain(ExplainArgs),
    /// Predict one patient from a JSON record on the original scale.
    Predict(PredictArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Preprocess(_) => "preprocess",
            Command::Select(_) => "select",
            Command::Tune(_) => "tune",
            Command::Train(_) => "train",
            Command::Evaluate(_) => "evaluate",
            Command::Explain(_) => "explain",
            Command::Predict(_) => "predict",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    PaperShaped,
    SparseLinear,
    ThresholdInteraction,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value = "paper-shaped")]
    pub preset: Preset,
    /// Full CohortSpec JSON; overrides --preset.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long, default_value_t = 3)]
    pub informative: usize,
    #[arg(long, default_value_t = 0.8)]
    pub effect: f64,
    /// Target censored fraction.
    #[arg(long)]
    pub censoring: Option<f64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Defaults to `schema.json` next to the input.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long, default_value_t = 0.20)]
    pub max_missing: f64,
    #[arg(long, default_value_t = 0.8)]
    pub train_frac: f64,
    #[arg(long, default_value_t = 5)]
    pub knn_k: usize,
    /// Comma-separated required features; defaults to the schema flags.
    #[arg(long, value_delimiter = ',')]
    pub required: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SubsetTuningMode {
    Retune,
    Fixed,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SelectArgs {
    /// Preprocess output directory.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "est")]
    pub models: Vec<String>,
    #[arg(long, default_value_t = 0.5)]
    pub keep_frac: f64,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, value_delimiter = ',')]
    pub priors: Vec<String>,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub min_improvement: f64,
    #[arg(long, value_enum, default_value = "retune")]
    pub subset_tuning: SubsetTuningMode,
    /// TPE trials per candidate subset in retune mode.
    #[arg(long, default_value_t = 25)]
    pub subset_trials: usize,
    /// Trees per forest in fixed mode.
    #[arg(long, default_value_t = 100)]
    pub fixed_trees: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TuneArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// `selection.json`; the model's forward-selected subset is tuned.
    #[arg(long)]
    pub selection: Option<PathBuf>,
    /// Explicit comma-separated feature list; overrides --selection.
    #[arg(long, value_delimiter = ',')]
    pub features: Option<Vec<String>>,
    #[arg(long, default_value = "est")]
    pub model: String,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// `tune_<model>.json`; supplies model, features and hyperparameters.
    #[arg(long)]
    pub tune: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub features: Option<Vec<String>>,
    /// Prediction horizon in days; defaults to 6142 when follow-up reaches
    /// it, otherwise the last training event time.
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long, default_value_t = 100)]
    pub background_cap: usize,
    #[arg(long, default_value_t = 500)]
    pub donor_cap: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// One or more model artifacts.
    #[arg(long = "model", required = true, value_delimiter = ',')]
    pub models: Vec<PathBuf>,
    /// Synthetic `truth.json`; adds an oracle row scored with the true risks.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ExplainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: Split,
    /// Explain only the patient with this row id.
    #[arg(long)]
    pub row: Option<usize>,
    /// Explain at most this many rows (in split order).
    #[arg(long)]
    pub max_rows: Option<usize>,
    /// Also write the artifact with sign-change thresholds attached.
    #[arg(long)]
    pub annotate: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// JSON object of feature name to value; `-` reads stdin.
    #[arg(long)]
    pub input: PathBuf,
}

/// Everything needed to reproduce one command's outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub seed: u64,
    pub threads: Option<usize>,
    pub out: &'a PathBuf,
    #[serde(flatten)]
    pub command: &'a Command,
}

/// Runs one parsed command; `stdout` receives anything printed (predict).
pub fn run(cli: &Cli, stdout: &mut dyn std::io::Write) -> Result<(), CliError> {
    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = cli.threads {
            if n == 0 {
                return Err(CliError::validation("--threads must be at least 1"));
            }
            b = b.num_threads(n);
        }
        b.build().map_err(|e| CliError::new(ErrorKind::Io, e.to_string()))?
    };
    if let Some(text) = pool.install(|| dispatch(cli))? {
        stdout
            .write_all(text.as_bytes())
            .map_err(|e| CliError::new(ErrorKind::Io, format!("stdout: {e}")))?;
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<Option<String>, CliError> {
    if !matches!(cli.command, Command::Predict(_)) {
        fsio::create_dir(&cli.out)?;
        let rc = RunConfig {
            tool: "survkit",
            version: env!("CARGO_PKG_VERSION"),
            seed: cli.seed,
            threads: cli.threads,
            out: &cli.out,
            command: &cli.command,
        };
        fsio::write_json(&cli.out.join(format!("run_config.{}.json", cli.command.name())), &rc)?;
    }
    match &cli.command {
        Command::Synth(a) => data::synth(cli, a),
        Command::Preprocess(a) => data::preprocess(cli, a),
        Command::Select(a) => select::select(cli, a),
        Command::Tune(a) => model::tune(cli, a),
        Command::Train(a) => model::train(cli, a),
        Command::Evaluate(a) => model::evaluate(cli, a),
        Command::Explain(a) => explain::explain(cli, a),
        Command::Predict(a) => return model::predict(a).map(Some),
    }?;
    Ok(None)
}
