mod commands;
mod config;
mod manifest;

use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use config::{load_config, RunConfig, Settings};

/// Digit classification under grayscale inversion: data, training, tables and symmetry probes.
#[derive(Debug, Parser)]
#[command(name = "symfeat", version)]
struct Cli {
    /// Flat `key = value` file; flags override it
    #[arg(long, global = true)]
    config: Option<std::path::PathBuf>,
    #[command(flatten)]
    settings: Settings,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Subcommand)]
enum Command {
    /// Obtain, normalise or summarise the digits corpus
    Data {
        #[arg(value_enum)]
        action: DataAction,
    },
    /// Train one network and score it on the test split
    Train,
    /// Score a saved model on the test split
    Eval,
    /// Reproduce a results table or the feature figure
    Reproduce {
        #[arg(value_enum)]
        target: Target,
    },
    /// Run a symmetry probe
    Probe {
        #[arg(value_enum)]
        probe: Probe,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DataAction {
    Fetch,
    Convert,
    Stats,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Target {
    Table1,
    Table2,
    Figure1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Probe {
    WeightFlip,
    Orbit,
    Goldstone,
    SampledLoss,
}

/// Why a run did not succeed.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags, config, paths or inputs (exit 1).
    Usage(anyhow::Error),
    /// An asserted invariant or acceptance band failed (exit 2).
    Check(String),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Self::Usage(e.into())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let file = match cli.config.as_deref().map(load_config).transpose() {
        Ok(f) => f.unwrap_or_default(),
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    let cfg = match RunConfig::resolve(&cli.settings, &file) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    let argv: Vec<String> = std::env::args().collect();
    match commands::run(&cli.command, &cfg, argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Check(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(2)
        }
    }
}
