//! `smct`: reproducible runs of the stochastic self-attention model.
//!
//! Every subcommand writes CSV results and a `manifest.json` into its
//! output directory. Options resolve as flag, then `--config` file, then
//! built-in default.

mod commands;
mod data;
mod manifest;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "smct",
    version,
    about = "Train and evaluate a stochastic self-attention sequence model"
)]
struct Cli {
    /// Worker threads; all cores when unset.
    #[arg(long, global = true, env = "SMCT_THREADS")]
    threads: Option<usize>,

    /// JSON object or `key = value` file with defaults for this command.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic autoregressive dataset.
    Generate(GenerateArgs),
    /// Fit a model to a CSV dataset.
    Train(TrainArgs),
    /// One-step-ahead evaluation of a checkpoint.
    Eval(EvalArgs),
    /// Multi-step forecasts from a frozen history.
    Forecast(ForecastArgs),
    /// Unique-ancestor counts of the particle genealogy.
    Diagnose(DiagnoseArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Generator: I (linear) or II (two-regime).
    #[arg(long)]
    pub model: Option<smct_core::dataio::ModelKind>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub sigma2: Option<f64>,
    /// Probability of the alpha regime.
    #[arg(long)]
    pub p: Option<f64>,
    /// Number of series.
    #[arg(long = "n")]
    pub n: Option<usize>,
    /// Series length.
    #[arg(long = "T")]
    pub len: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset CSV: `series_id,t,<features...>`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Generator settings of a synthetic dataset (`spec.json`).
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Comma-separated feature columns to model.
    #[arg(long)]
    pub targets: Option<String>,
    /// Cut series into windows of this length.
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    /// Standardize with train statistics; defaults to true without `--spec`.
    #[arg(long)]
    pub normalize: Option<bool>,
    #[arg(long)]
    pub particles: Option<usize>,
    /// Attention window length.
    #[arg(long)]
    pub lag: Option<usize>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub d_ff: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Constant learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Use the warmup schedule with this many warmup steps instead of `--lr`.
    #[arg(long)]
    pub warmup: Option<u64>,
    #[arg(long)]
    pub em_exponent: Option<f64>,
    /// Noise sources re-estimated by EM: `all`, `none` or a list of q,k,v,z,obs.
    #[arg(long)]
    pub em: Option<String>,
    #[arg(long)]
    pub update_weights: Option<bool>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalCommon {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Score this CSV instead of the training file.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// train, val or test.
    #[arg(long)]
    pub split: Option<String>,
    /// Filter particles; the training value when unset.
    #[arg(long)]
    pub particles: Option<usize>,
    /// Predictive draws per step.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Interval coverage level.
    #[arg(long)]
    pub level: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: EvalCommon,
    /// Also write every predictive draw.
    #[arg(long)]
    pub write_samples: Option<bool>,
}

#[derive(Debug, Args)]
pub struct ForecastArgs {
    #[command(flatten)]
    pub common: EvalCommon,
    /// Observed steps before the forecast; sequence length minus horizon when unset.
    #[arg(long)]
    pub history: Option<usize>,
    #[arg(long)]
    pub horizon: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub particles: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

fn configure_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        if n == 0 {
            bail!("--threads must be >= 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    configure_threads(cli.threads)?;
    let mut s = settings::Settings::load(cli.config.as_deref())?;
    match cli.command {
        Command::Generate(a) => commands::generate(a, &mut s),
        Command::Train(a) => commands::train(a, &mut s),
        Command::Eval(a) => commands::eval(a, &mut s),
        Command::Forecast(a) => commands::forecast(a, &mut s),
        Command::Diagnose(a) => commands::diagnose(a, &mut s),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
