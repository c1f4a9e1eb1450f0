//! Command-line front end: dataset generation, training, grounding,
//! evaluation and a gradient check, behind one `run` entry point.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub mod commands;
pub mod config;

pub use config::{load_config, RunConfig};

#[derive(Parser, Debug)]
#[command(
    name = "relground",
    version,
    about = "Weakly-supervised relation grounding in videos"
)]
pub struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset.
    Gen(GenArgs),
    /// Train a model on a manifest.
    Train(TrainArgs),
    /// Ground every relation of a manifest with a trained model.
    Ground(GroundArgs),
    /// Score grounding results against ground truth.
    Eval(EvalArgs),
    /// Compare analytic and numeric gradients on a tiny model.
    Gradcheck(GradcheckArgs),
}

/// Options shared by commands that build or run a model.
#[derive(Args, Debug, Clone, Default)]
pub struct ModelOpts {
    /// key=value configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one configuration key (repeatable), e.g. --set learning_rate=0.001.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Temporal attention threshold for grounding.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Disable message passing between subject and object.
    #[arg(long)]
    pub no_msg: bool,
    /// Disable the clip-level temporal attention.
    #[arg(long)]
    pub no_clip: bool,
    /// Disable temporal attention altogether.
    #[arg(long)]
    pub no_tau: bool,
    /// Drop the predicate from the query and the reconstruction target.
    #[arg(long)]
    pub co_occur: bool,
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 500)]
    pub train: usize,
    #[arg(long, default_value_t = 100)]
    pub test: usize,
    /// Fraction of test scenes whose triplet never occurs in training.
    #[arg(long, default_value_t = 0.0)]
    pub zero_shot_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 24)]
    pub frames: usize,
    #[arg(long, default_value_t = 6)]
    pub regions: usize,
    #[arg(long, default_value_t = 8)]
    pub appearance_dim: usize,
    #[arg(long, default_value_t = 3)]
    pub min_entities: usize,
    #[arg(long, default_value_t = 6)]
    pub max_entities: usize,
    #[arg(long, default_value_t = 0.5)]
    pub distractor_probability: f64,
    #[arg(long, default_value_t = 0.1)]
    pub appearance_noise: f64,
    /// Height of the per-category appearance code.
    #[arg(long, default_value_t = 8.0)]
    pub appearance_scale: f64,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Checkpoint path; configuration goes next to it with a `.meta` suffix.
    #[arg(long)]
    pub out: PathBuf,
    /// Training log (epoch, split, loss, timestamp per line).
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Pick the grounding threshold on the validation split after training.
    #[arg(long)]
    pub search_sigma: bool,
    #[command(flatten)]
    pub model: ModelOpts,
}

#[derive(Args, Debug)]
pub struct GroundArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub opts: ModelOpts,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Grounding results; optional with --random-baseline.
    #[arg(long)]
    pub results: Option<PathBuf>,
    /// Manifest with ground truth.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Only score relations unseen in this training manifest.
    #[arg(long, value_name = "TRAIN_MANIFEST")]
    pub zero_shot: Option<PathBuf>,
    #[arg(long, conflicts_with = "dynamic_only")]
    pub static_only: bool,
    #[arg(long)]
    pub dynamic_only: bool,
    /// Also score random subject/object tubes.
    #[arg(long)]
    pub random_baseline: bool,
    /// Write line-delimited records here.
    #[arg(long)]
    pub records: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// key=value file for the metric thresholds.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    #[arg(long, default_value_t = 5)]
    pub seed: u64,
}

/// A usage problem (exit 1) or a failure while running (exit 2).
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl From<relground_core::Error> for CliError {
    fn from(e: relground_core::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

/// Parses `args` (program name first) and runs the command; returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.jobs {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| commands::dispatch(cli.command)),
            Err(e) => Err(CliError::Usage(format!("cannot start {n} workers: {e}"))),
        },
        None => commands::dispatch(cli.command),
    };
    match result {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}\n\nRun 'relground --help' for usage.");
            1
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            2
        }
    }
}
