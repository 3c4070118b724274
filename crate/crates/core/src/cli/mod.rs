//! Command-line interface.
//!
//! Exit codes: 0 success, 1 other failure, 2 configuration or input error,
//! 3 I/O error, 4 backend error.

mod check;
mod commands;
pub mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::backend::BackendError;
use crate::error::Error;
use crate::fidelity::Direction;
use crate::normalization::NormalizationKind;
use crate::tensor::TensorError;

pub use check::{run_checks, CheckOutcome};
pub use config::{RunConfig, TieBreakConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),

    #[error("{path}: {source}")]
    Input { path: PathBuf, source: Error },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Backend(#[from] BackendError),

    #[error(transparent)]
    Core(#[from] Error),

    /// Some samples failed; results for the rest were written.
    #[error("{failed} sample(s) failed: {ids}")]
    Samples {
        failed: usize,
        ids: String,
        backend: bool,
    },

    #[error("{0} conformance check(s) failed")]
    Conformance(usize),
}

impl CliError {
    pub(crate) fn input(path: &Path, source: Error) -> Self {
        CliError::Input {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Input { source, .. } => match source {
                Error::Tensor(TensorError::Io { .. }) => 3,
                _ => 2,
            },
            CliError::Io { .. } => 3,
            CliError::Backend(_) | CliError::Conformance(_) => 4,
            CliError::Core(e) if e.is_backend() => 4,
            CliError::Core(Error::Tensor(TensorError::Io { .. })) => 3,
            CliError::Core(_) => 1,
            CliError::Samples { backend, .. } => {
                if *backend {
                    4
                } else {
                    1
                }
            }
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "salens",
    version,
    about = "Aggregate saliency-map ensembles and score them with insertion/deletion metrics"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Normalize and aggregate each sample's ensemble into one map.
    Aggregate(CommonArgs),
    /// Compute insertion and deletion curves for each sample.
    Evaluate(CommonArgs),
    /// Evaluate the batch over a grid of one hyperparameter.
    Sweep(SweepArgs),
    /// Evaluate nested top-k ensembles ordered by individual member scores.
    Ablate(AblateArgs),
    /// Probe an external backend for protocol conformance.
    BackendCheck(CheckArgs),
    /// Serve a built-in model over the backend protocol on stdin/stdout.
    Serve(ServeArgs),
    /// Write a synthetic benchmark (maps, images, weights, config).
    Synth(SynthArgs),
}

fn parse_direction(s: &str) -> Result<Direction, String> {
    match s {
        "insertion" | "ins" => Ok(Direction::Insertion),
        "deletion" | "del" => Ok(Direction::Deletion),
        other => Err(format!("unknown direction '{other}'")),
    }
}

/// Options shared by the batch subcommands; each overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// JSON run configuration.
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    /// Ensemble member map (repeatable); replaces the configured samples.
    #[arg(long)]
    pub member: Vec<PathBuf>,
    /// Sample id used with --member.
    #[arg(long)]
    pub id: Option<String>,
    /// Input image for every sample.
    #[arg(long)]
    pub image: Option<PathBuf>,
    /// Target class for every sample.
    #[arg(long)]
    pub class: Option<usize>,
    /// none, linear, zscore, l1 or l2.
    #[arg(long)]
    pub normalization: Option<NormalizationKind>,
    /// avg, percentile, ucb, pi, ei, ci, api, aei, var or rbm.
    #[arg(long)]
    pub method: Option<String>,
    /// Exploration rate (ucb, pi, ei, var).
    #[arg(long, allow_hyphen_values = true)]
    pub epsilon: Option<f64>,
    /// Percentile in [0, 100].
    #[arg(long)]
    pub k: Option<f64>,
    /// Lower end of the exploration interval (api, aei).
    #[arg(long, allow_hyphen_values = true)]
    pub a: Option<f64>,
    /// Upper end of the exploration interval (api, aei).
    #[arg(long, allow_hyphen_values = true)]
    pub b: Option<f64>,
    /// Grid points over the exploration interval (api, aei).
    #[arg(long)]
    pub n: Option<usize>,
    /// Stabilizer added to the scaled deviation (var).
    #[arg(long)]
    pub delta: Option<f64>,
    /// Learning rate (rbm).
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Training passes (rbm).
    #[arg(long)]
    pub iters: Option<usize>,
    /// Use a zero exploration rate when the incumbent is not positive (ci).
    #[arg(long)]
    pub zero_fallback: bool,
    /// Number of perturbation steps.
    #[arg(long)]
    pub increments: Option<usize>,
    /// Images per backend call.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Use a constant baseline with this value.
    #[arg(long, allow_hyphen_values = true, conflicts_with = "normal_baseline")]
    pub baseline_value: Option<f64>,
    /// Use a per-channel random normal baseline.
    #[arg(long)]
    pub normal_baseline: bool,
    /// index or shuffle.
    #[arg(long, value_enum)]
    pub tie_break: Option<TieBreakConfig>,
    /// Comma-separated list of insertion, deletion.
    #[arg(long, value_delimiter = ',', value_parser = parse_direction)]
    pub directions: Option<Vec<Direction>>,
    /// External backend command line, split on whitespace.
    #[arg(long)]
    pub backend_cmd: Option<String>,
    /// External backend timeout in seconds.
    #[arg(long)]
    pub timeout: Option<f64>,
    /// Output directory.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Base seed for every random choice.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Parallel workers; each external backend process serves one.
    #[arg(short, long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Parameter to sweep: a method parameter (epsilon, k, delta, alpha, ...)
    /// or `normalization`.
    #[arg(long)]
    pub param: String,
    /// Comma-separated grid values.
    #[arg(
        long,
        allow_hyphen_values = true,
        value_delimiter = ',',
        conflicts_with = "range"
    )]
    pub values: Option<Vec<String>>,
    /// Evenly spaced grid START:STOP:STEP, endpoints included.
    #[arg(long, allow_hyphen_values = true)]
    pub range: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// CSV `member,insertion_auc,deletion_auc` of precomputed member scores.
    #[arg(long)]
    pub scores: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct CheckArgs {
    /// Per-request timeout in seconds.
    #[arg(long, default_value_t = 10.0)]
    pub timeout: f64,
    /// Seed for the probe images.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Backend program and its arguments.
    #[arg(required = true, trailing_var_arg = true, allow_hyphen_values = true)]
    pub command: Vec<String>,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    /// Linear-evidence weights tensor (m, n, classes).
    #[arg(
        long,
        conflicts_with = "reference",
        required_unless_present = "reference"
    )]
    pub weights: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    /// Image channels the linear model accepts.
    #[arg(long, default_value_t = 1)]
    pub channels: usize,
    /// Reference image for the match-fraction model.
    #[arg(long)]
    pub reference: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Directory to create.
    #[arg(short, long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub height: usize,
    #[arg(long, default_value_t = 16)]
    pub width: usize,
    /// Maps per ensemble.
    #[arg(long, default_value_t = 7)]
    pub members: usize,
    /// Number of samples.
    #[arg(long, default_value_t = 16)]
    pub samples: usize,
    /// Gaussian member noise, relative to the spread of the true weights.
    #[arg(long, default_value_t = 0.5)]
    pub noise: f64,
    /// Per-pixel probability of an artifact spike in a member.
    #[arg(long, default_value_t = 0.05)]
    pub artifact_rate: f64,
    /// Artifact height, relative to the largest true weight.
    #[arg(long, default_value_t = 1.0)]
    pub artifact_scale: f64,
    /// Softmax temperature of the linear model.
    #[arg(long, default_value_t = 8.0)]
    pub temperature: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Aggregate(args) => commands::aggregate(&RunConfig::from_args(&args)?),
        Command::Evaluate(args) => commands::evaluate(&RunConfig::from_args(&args)?),
        Command::Sweep(args) => commands::sweep(&RunConfig::from_args(&args.common)?, &args),
        Command::Ablate(args) => {
            commands::ablate(&RunConfig::from_args(&args.common)?, args.scores.as_deref())
        }
        Command::BackendCheck(args) => check::backend_check(&args),
        Command::Serve(args) => commands::serve(&args),
        Command::Synth(args) => commands::synth(&args),
    }
}

/// Parses the process arguments, runs, and maps errors to exit codes.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
