//! `bca`: experiment CLI for block-circulant adapter numerics.
//!
//! Subcommands: `simulate` (gradient-scaling training runs), `demo-divergence`
//! (learning-rate heuristic contrast), `train-toy` (adapter training on a
//! synthetic task with checkpointing), `complexity` (parameter/FLOP reports).
//! Every command is deterministic given its config and seed.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use bca_core::Error;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bca", version, about = "Block-circulant adapter experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train dense and block-circulant models on one random system and
    /// record loss and gradient curves per configuration.
    Simulate(commands::simulate::Args),
    /// Show divergence without the learning-rate heuristic and convergence
    /// with it, at the largest dense-converging rate.
    DemoDivergence(commands::demo::Args),
    /// Train a block-circulant adapter on a synthetic task; save and
    /// optionally merge the result.
    TrainToy(commands::train_toy::Args),
    /// Print trainable-parameter and FLOP estimates per method.
    Complexity(commands::complexity::Args),
}

/// Exit codes: 2 for configuration problems, 3 for I/O, 4 for numeric or
/// integrity failures.
fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Size(_) | Error::Compatibility(_) | Error::Version(_) => 2,
        Error::Io(_) => 3,
        Error::Numeric(_) | Error::Integrity(_) => 4,
    }
}

/// Output directory precedence: `--out` flag, config file, `BCA_OUT`
/// environment variable, then `./bca-out`.
fn resolve_out(flag: Option<PathBuf>, file: Option<PathBuf>) -> PathBuf {
    flag.or(file)
        .or_else(|| std::env::var_os("BCA_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("bca-out"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(args) => commands::simulate::run(args),
        Command::DemoDivergence(args) => commands::demo::run(args),
        Command::TrainToy(args) => commands::train_toy::run(args),
        Command::Complexity(args) => commands::complexity::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
