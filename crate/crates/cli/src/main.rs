//! `aoisnn`: dataset synthesis, training and evaluation from the shell.

mod commands;
mod summary;
mod thresholds;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "aoisnn", version = env!("AOISNN_GIT_VERSION"), about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug)]
pub struct Common {
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EvalMode {
    Fixed,
    Cutoff,
    Uncertainty,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic event dataset and its manifest.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Train one network and write its checkpoint and metrics.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate checkpoints at fixed T, under cutoff, or as an ensemble.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "fixed")]
        mode: EvalMode,
        /// `lo:hi:n`, a single value, or `inf`; comma separated.
        #[arg(long, default_value = "0.8:1.0:20")]
        thresholds: String,
        /// Comma separated checkpoint paths.
        #[arg(long, value_delimiter = ',', required = true)]
        checkpoints: Vec<PathBuf>,
        /// Dataset manifest; overrides the config.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth { common } => commands::synth(&common),
        Command::Train { common } => commands::train(&common),
        Command::Eval { common, mode, thresholds, checkpoints, dataset } => {
            commands::eval(&common, mode, &thresholds, &checkpoints, dataset.as_deref())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 2 config, 3 data, 4 numeric abort.
fn exit_code(e: &aoisnn::Error) -> u8 {
    use aoisnn::Error::*;
    match e {
        Config { .. } => 2,
        Numeric(_) => 4,
        Data { .. }
        | Format(_)
        | Integrity(_)
        | Compatibility(_)
        | Io { .. }
        | Dimension(_)
        | Range(_)
        | Index { .. } => 3,
        Contract(_) => 1,
    }
}
