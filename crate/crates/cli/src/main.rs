//! `weakl` command-line runner.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::Run;
use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "weakl", version, about = "Fit, tune and evaluate closed-form kernel forecasters")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; all cores when absent.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Fit the configured model and forecast every row.
    Fit,
    /// Grid-search hyperparameters, then refit on train and validation.
    Tune,
    /// Monte Carlo comparison on the two-leaf toy hierarchy.
    ToyBenchmark,
    /// MAE skill of one forecast file over another.
    Compare,
    /// Apply a saved model to a dataset.
    Predict,
}

fn run(cli: Cli) -> CliResult<()> {
    let path = cli
        .config
        .ok_or_else(|| CliError::Config("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(&path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.out = Some(std::path::absolute(&out).unwrap_or(out));
    }
    let workers = match cli.workers {
        Some(0) => return Err(CliError::Config("--workers must be positive".into())),
        Some(n) => {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| CliError::Config(e.to_string()))?;
            n
        }
        None => rayon::current_num_threads(),
    };
    let name = match cli.command {
        Cmd::Fit => "fit",
        Cmd::Tune => "tune",
        Cmd::ToyBenchmark => "toy-benchmark",
        Cmd::Compare => "compare",
        Cmd::Predict => "predict",
    };
    let run = Run::new(name, cfg, workers);
    match cli.command {
        Cmd::Fit => commands::fit(run),
        Cmd::Tune => commands::tune(run),
        Cmd::ToyBenchmark => commands::toy_benchmark(run),
        Cmd::Compare => commands::compare(run),
        Cmd::Predict => commands::predict(run),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
