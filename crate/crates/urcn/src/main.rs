//! Command-line interface for dataset simulation, network training, and
//! evaluation.
//!
//! Flags take precedence over an optional JSON config file (`--config`);
//! the run's `manifest.json` records the fully resolved configuration.
//! Exit codes: 0 success, 2 argument error, 3 numerical failure, 4 i/o.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use urcn::app::{
    cmd_evaluate, cmd_simulate, cmd_train, EvaluateConfig, SimulateConfig, TrainCliConfig,
};
use urcn::error::{Error, Result};

#[derive(Parser)]
#[command(
    name = "urcn",
    about = "Unrolled reconstruction networks for compressed-sensing MRI and sparse-view CT",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (train/val/test containers).
    Simulate(SimulateArgs),
    /// Train an unrolled network on a simulated dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a test split with baselines and metrics.
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON file with a SimulateConfig; explicit flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// mri or ct
    #[arg(long)]
    modality: Option<String>,
    /// Image size in pixels (square).
    #[arg(long)]
    size: Option<usize>,
    /// MRI acceleration factor R.
    #[arg(long)]
    accel: Option<f64>,
    /// Side fraction of the fully sampled k-space center square.
    #[arg(long)]
    center_fraction: Option<f64>,
    /// Complex noise standard deviation per k-space component.
    #[arg(long)]
    noise_sigma: Option<f64>,
    /// CT projection views over 360 degrees.
    #[arg(long)]
    views: Option<usize>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_val: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    /// shepp_logan or random_ellipses
    #[arg(long)]
    phantom: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for the dataset containers.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
}

impl SimulateArgs {
    fn resolve(self) -> Result<SimulateConfig> {
        let mut cfg: SimulateConfig = load_config(self.config.as_deref())?;
        merge(&mut cfg.modality, self.modality);
        merge(&mut cfg.size, self.size);
        merge(&mut cfg.accel, self.accel);
        merge(&mut cfg.center_fraction, self.center_fraction);
        merge(&mut cfg.noise_sigma, self.noise_sigma);
        merge(&mut cfg.views, self.views);
        merge(&mut cfg.n_train, self.n_train);
        merge(&mut cfg.n_val, self.n_val);
        merge(&mut cfg.n_test, self.n_test);
        merge(&mut cfg.phantom, self.phantom);
        merge(&mut cfg.seed, self.seed);
        merge(&mut cfg.out, self.out);
        cfg.force |= self.force;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    /// JSON file with a TrainCliConfig; explicit flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory produced by `urcn simulate`.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// pdhg, admm, or ista
    #[arg(long)]
    family: Option<String>,
    /// I, II, III, or I_star (pdhg only)
    #[arg(long)]
    state: Option<String>,
    /// Unrolled iterations; 0 = family default (10, admm 15).
    #[arg(long)]
    stages: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Symmetry-loss weight for ista networks.
    #[arg(long)]
    gamma: Option<f64>,
    /// Global gradient-norm clip.
    #[arg(long)]
    clip_norm: Option<f64>,
    /// Transform branches in the admm z-update.
    #[arg(long)]
    l_transforms: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for checkpoint, loss curve, and manifest.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

impl TrainArgs {
    fn resolve(self) -> Result<TrainCliConfig> {
        let mut cfg: TrainCliConfig = load_config(self.config.as_deref())?;
        merge(&mut cfg.dataset, self.dataset);
        merge(&mut cfg.family, self.family);
        merge(&mut cfg.state, self.state);
        merge(&mut cfg.stages, self.stages);
        merge(&mut cfg.epochs, self.epochs);
        merge(&mut cfg.batch_size, self.batch_size);
        merge(&mut cfg.lr, self.lr);
        merge(&mut cfg.gamma, self.gamma);
        merge(&mut cfg.clip_norm, self.clip_norm);
        merge(&mut cfg.l_transforms, self.l_transforms);
        merge(&mut cfg.seed, self.seed);
        merge(&mut cfg.out, self.out);
        cfg.force |= self.force;
        Ok(cfg)
    }
}

#[derive(Args)]
struct EvaluateArgs {
    /// JSON file with an EvaluateConfig; explicit flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated acceleration factors to sweep (MRI only).
    #[arg(long, value_delimiter = ',')]
    sweep_accel: Option<Vec<f64>>,
    /// Export PGM images and per-sample ESP CSVs for this many samples.
    #[arg(long)]
    export_images: Option<usize>,
    #[arg(long)]
    force: bool,
}

impl EvaluateArgs {
    fn resolve(self) -> Result<EvaluateConfig> {
        let mut cfg: EvaluateConfig = load_config(self.config.as_deref())?;
        merge(&mut cfg.dataset, self.dataset);
        merge(&mut cfg.checkpoint, self.checkpoint);
        merge(&mut cfg.out, self.out);
        merge(&mut cfg.sweep_accel, self.sweep_accel);
        merge(&mut cfg.export_images, self.export_images);
        cfg.force |= self.force;
        Ok(cfg)
    }
}

fn merge<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

fn load_config<T: Default + serde::de::DeserializeOwned>(
    path: Option<&std::path::Path>,
) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text =
                std::fs::read_to_string(p).map_err(|e| Error::io(p.display().to_string(), e))?;
            serde_json::from_str(&text).map_err(|e| Error::Format {
                path: p.display().to_string(),
                reason: e.to_string(),
            })
        }
    }
}

fn run() -> Result<()> {
    match Cli::parse().command {
        Command::Simulate(args) => cmd_simulate(&args.resolve()?),
        Command::Train(args) => cmd_train(&args.resolve()?),
        Command::Evaluate(args) => cmd_evaluate(&args.resolve()?),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
