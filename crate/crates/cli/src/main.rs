use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

mod commands;
mod config;
mod svg;

#[derive(Parser)]
#[command(name = "pwrd", version, about = "Rate-distortion limits for piecewise homogeneous Gaussian fields")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "PWRD_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw synthetic realizations of a field model.
    Sample(SampleOpts),
    /// Estimate a piecewise model from a batch by tiling and clustering.
    Fit(FitOpts),
    /// Gaussianity probes, second-order structure and model comparison.
    Diagnose(DiagnoseOpts),
    /// Rate-distortion curve and finite-blocklength bounds.
    Bounds(BoundsOpts),
}

#[derive(Args, Serialize, Deserialize, Default, Debug, Clone)]
#[serde(deny_unknown_fields)]
pub struct SampleOpts {
    /// JSON config file; flags take precedence.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Number of realizations T.
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// float32 or float64.
    #[arg(long)]
    pub dtype: Option<String>,
    /// Circulant embedding padding factor (1 = periodized torus).
    #[arg(long)]
    pub padding: Option<usize>,
    /// Override the model's spectrum method (dense or bccb).
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub tile: Option<usize>,
}

#[derive(Args, Serialize, Deserialize, Default, Debug, Clone)]
#[serde(deny_unknown_fields)]
pub struct FitOpts {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Batch directory (with manifest) or a raw binary with sidecar.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Tile side k.
    #[arg(long)]
    pub tile: Option<usize>,
    /// Candidate region counts, e.g. 1,2,3,4.
    #[arg(long, value_delimiter = ',')]
    pub k_range: Option<Vec<usize>>,
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Serialize, Deserialize, Default, Debug, Clone)]
#[serde(deny_unknown_fields)]
pub struct DiagnoseOpts {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Probe count J.
    #[arg(long)]
    pub probes: Option<usize>,
    /// Sites per probe (default min(64, n)).
    #[arg(long)]
    pub support: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Model whose partition defines the piecewise candidate.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Tile grid for the field likelihoods (defaults to the model's).
    #[arg(long)]
    pub tile: Option<usize>,
    #[arg(long)]
    pub stationarity_threshold: Option<f64>,
    #[arg(long)]
    pub isotropy_threshold: Option<f64>,
}

#[derive(Args, Serialize, Deserialize, Default, Debug, Clone)]
#[serde(deny_unknown_fields)]
pub struct BoundsOpts {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Target distortion D for the bound curve.
    #[arg(long)]
    pub d: Option<f64>,
    /// Distortions for the rate-distortion curve (defaults to D).
    #[arg(long, value_delimiter = ',')]
    pub d_grid: Option<Vec<f64>>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Lattice scale factors defining the blocklengths n.
    #[arg(long, value_delimiter = ',')]
    pub scales: Option<Vec<usize>>,
    /// Only the second-order approximation.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub approx_only: Option<bool>,
    #[arg(long)]
    pub mc_samples: Option<usize>,
    #[arg(long)]
    pub inner_samples: Option<usize>,
    #[arg(long)]
    pub exact_limit: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub tol_bits: Option<f64>,
    /// Fixed γ values for the converse (default {½ ln n, 0.5, 1, 2, 4, 8}).
    #[arg(long, value_delimiter = ',')]
    pub gammas: Option<Vec<f64>>,
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub tile: Option<usize>,
    /// Also render SVG charts.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub svg: Option<bool>,
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(pe) = cause.downcast_ref::<pwrd::Error>() {
            return if pe.is_usage() { 2 } else { 3 };
        }
    }
    2
}

fn run(cli: Cli) -> Result<()> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global()?;
    }
    match cli.command {
        Command::Sample(o) => {
            let r = config::merge(&o, o.config.as_deref(), "sample")?;
            commands::sample(r)
        }
        Command::Fit(o) => {
            let r = config::merge(&o, o.config.as_deref(), "fit")?;
            commands::fit(r)
        }
        Command::Diagnose(o) => {
            let r = config::merge(&o, o.config.as_deref(), "diagnose")?;
            commands::diagnose(r)
        }
        Command::Bounds(o) => {
            let r = config::merge(&o, o.config.as_deref(), "bounds")?;
            commands::bounds(r)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
