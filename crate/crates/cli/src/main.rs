use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod config;
mod eval;
mod qe;
mod report;
mod schedule;
mod train;

/// Failure carrying the process exit code: 2 for usage and validation
/// errors, 3 for numerical failures at run time.
#[derive(Debug)]
pub struct CliError {
    pub exit: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError { exit: 2, message: message.into() }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        CliError { exit: 3, message: message.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<cyclebnn::Error> for CliError {
    fn from(e: cyclebnn::Error) -> Self {
        match e.code() {
            "diverged" | "non-finite-gradient" | "zero-variance-weights" | "degenerate-batch" => {
                CliError::numerical(e.to_string())
            }
            _ => CliError::usage(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::usage(format!("io-error: {e}"))
    }
}

#[derive(Parser)]
#[command(name = "cyclebnn", version, about = "Binary neural network training with cyclic backward precision")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network from a TOML config; writes metrics.csv, model.cbnn and the cost report.
    Train { config: PathBuf },
    /// Top-1 accuracy of a checkpoint, optionally checked against the bit-packed path.
    Eval(eval::EvalArgs),
    /// Print the per-epoch precision and learning-rate schedule as CSV.
    Schedule(schedule::ScheduleArgs),
    /// Quantization-error table for Gaussian weight fits.
    Qe(qe::QeArgs),
    /// Binarize a checkpoint's binary layers into a CBNP packed-model file.
    Pack { checkpoint: PathBuf, out: PathBuf },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { config } => train::run(&config),
        Command::Eval(args) => eval::run(&args),
        Command::Schedule(args) => schedule::run(&args),
        Command::Qe(args) => qe::run(&args),
        Command::Pack { checkpoint, out } => eval::pack(&checkpoint, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit)
        }
    }
}
