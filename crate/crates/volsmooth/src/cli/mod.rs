//! Command-line entry point.
//!
//! One binary, nine subcommands: `ingest`, `gen-ssvi`, `fit-svi`, `train`,
//! `finetune`, `smooth`, `validate`, `benchmark`, `backtest`. Every run is
//! driven by a [`RunConfig`] loaded from `--config <json>` (unknown keys
//! rejected), optionally overridden by `--seed`, and writes its artifacts
//! plus a `run_manifest.json` (inputs, resolved-config hash, outputs) into
//! the `--out` directory, so runs are reproducible from the manifest alone.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
//! failure, 5 validation found arbitrage violations.

mod commands;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gno::{GnoConfig, GnoError};
use crate::market_data::{Domain, MarketDataError};
use crate::metrics::MetricsError;
use crate::svi::{GridSpec, PerturbationSpec, SsviParams, SviError};
use crate::training::{LossWeights, TrainConfig, TrainError};

/// Synthetic-dataset block of the run config.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SsviGenConfig {
    pub base: SsviParams,
    pub n_surfaces: usize,
    pub perturbation: PerturbationSpec,
    pub grid: GridSpec,
}

impl Default for SsviGenConfig {
    fn default() -> Self {
        SsviGenConfig {
            base: SsviParams::default(),
            n_surfaces: 64,
            perturbation: PerturbationSpec::default(),
            grid: GridSpec::default(),
        }
    }
}

/// Fully resolved run configuration; logged (hashed) in the manifest.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub jobs: Option<usize>,
    pub domain: Domain,
    pub gno: GnoConfig,
    pub train: TrainConfig,
    pub weights: LossWeights,
    pub ssvi: SsviGenConfig,
    /// Default epoch count for `finetune`.
    pub finetune_epochs: usize,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric error: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl From<MarketDataError> for CliError {
    fn from(e: MarketDataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<GnoError> for CliError {
    fn from(e: GnoError) -> Self {
        match e {
            GnoError::Checkpoint(_) => CliError::Data(e.to_string()),
            GnoError::InvalidConfig(_) => CliError::Config(e.to_string()),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

impl From<SviError> for CliError {
    fn from(e: SviError) -> Self {
        CliError::Numeric(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::InvalidConfig(_) => CliError::Config(e.to_string()),
            TrainError::EmptyDataset => CliError::Data(e.to_string()),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Numeric(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<crate::arbitrage::ArbitrageError> for CliError {
    fn from(e: crate::arbitrage::ArbitrageError) -> Self {
        CliError::Numeric(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BacktestMode {
    Interpolate,
    Extrapolate,
    Both,
}

#[derive(Debug, Parser)]
#[command(
    name = "volsmooth",
    about = "Arbitrage-validated smoothing of implied volatility surfaces",
    version
)]
struct Cli {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Concurrency cap (recorded; processing is sequential).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory for artifacts and the run manifest.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Convert a raw quotes CSV into per-timestamp snapshot JSON files.
    Ingest {
        #[arg(long)]
        quotes: PathBuf,
    },
    /// Generate a synthetic perturbed-SSVI snapshot dataset.
    GenSsvi,
    /// Calibrate an SVI slice per maturity of one snapshot.
    FitSvi {
        #[arg(long)]
        snapshot: PathBuf,
    },
    /// Train the smoothing operator on a directory of snapshots.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Finetune a checkpoint on new data with base-data replay.
    Finetune {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        new_data: PathBuf,
        #[arg(long)]
        base_data: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Evaluate a checkpoint on a uniform output grid, CSV `rho,z,tau,k,vol`.
    Smooth {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        snapshot: PathBuf,
        /// Output grid as `m,n` (ρ-lines, z-nodes).
        #[arg(long, default_value = "50,50")]
        grid: String,
    },
    /// Check a smoothed surface for arbitrage; exit 5 on violations.
    Validate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        snapshot: PathBuf,
        #[arg(long, default_value = "50,50")]
        grid: String,
    },
    /// Error metrics of a checkpoint against quote snapshots.
    Benchmark {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Drop-50% interpolation/extrapolation backtest of a checkpoint.
    Backtest {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = BacktestMode::Both)]
        mode: BacktestMode,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    if config.finetune_epochs == 0 {
        config.finetune_epochs = 10;
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
        config.train.seed = seed;
    }
    if let Some(jobs) = cli.jobs {
        config.jobs = Some(jobs);
    }
    config.gno.validate()?;
    config.train.validate()?;
    config.weights.validate()?;
    Ok(config)
}

/// FNV-1a over the resolved config JSON, hex-encoded.
fn config_hash(config: &RunConfig) -> String {
    let text = serde_json::to_string(config).expect("config serializes");
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in text.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    format!("{h:016x}")
}

#[derive(Serialize)]
struct RunManifest<'a> {
    subcommand: &'a str,
    seed: u64,
    jobs: Option<usize>,
    config_hash: String,
    inputs: Vec<String>,
    outputs: Vec<String>,
}

fn write_manifest(
    out_dir: &PathBuf,
    config: &RunConfig,
    subcommand: &str,
    inputs: &[PathBuf],
    outputs: &[PathBuf],
) -> Result<(), CliError> {
    let manifest = RunManifest {
        subcommand,
        seed: config.seed,
        jobs: config.jobs,
        config_hash: config_hash(config),
        inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
    };
    let path = out_dir.join("run_manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest).expect("manifest"))
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(())
}

/// Run the CLI on an argument vector; returns the process exit code.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let config = match load_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return e.exit_code();
        }
    };
    if let Err(e) = std::fs::create_dir_all(&cli.out) {
        eprintln!("cannot create output directory {}: {e}", cli.out.display());
        return 3;
    }

    let result = match &cli.command {
        Command::Ingest { quotes } => commands::ingest(&config, quotes, &cli.out),
        Command::GenSsvi => commands::gen_ssvi(&config, &cli.out),
        Command::FitSvi { snapshot } => commands::fit_svi(&config, snapshot, &cli.out),
        Command::Train { data, epochs } => commands::train(&config, data, *epochs, &cli.out),
        Command::Finetune { checkpoint, new_data, base_data, epochs } => {
            commands::finetune(&config, checkpoint, new_data, base_data, *epochs, &cli.out)
        }
        Command::Smooth { checkpoint, snapshot, grid } => {
            commands::smooth(&config, checkpoint, snapshot, grid, &cli.out)
        }
        Command::Validate { checkpoint, snapshot, grid } => {
            commands::validate(&config, checkpoint, snapshot, grid, &cli.out)
        }
        Command::Benchmark { checkpoint, data } => {
            commands::benchmark(&config, checkpoint, data, &cli.out)
        }
        Command::Backtest { checkpoint, data, mode } => {
            commands::backtest(&config, checkpoint, data, *mode, &cli.out)
        }
    };

    match result {
        Ok(outcome) => {
            if let Err(e) = write_manifest(
                &cli.out,
                &config,
                outcome.subcommand,
                &outcome.inputs,
                &outcome.outputs,
            ) {
                eprintln!("{e}");
                return e.exit_code();
            }
            outcome.exit_code
        }
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

/// What a successful subcommand reports back for the manifest.
pub(crate) struct Outcome {
    pub subcommand: &'static str,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub exit_code: i32,
}
