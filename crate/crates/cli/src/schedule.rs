use std::io::{self, Write};

use clap::Args;
use cyclebnn::schedule::{lr_at, precision_at, CycleConfig, LrConfig, ScheduleMode};

use crate::CliError;

#[derive(Args)]
pub struct ScheduleArgs {
    /// Total epochs N.
    epochs: usize,
    /// Number of precision cycles c.
    cycles: usize,
    /// Minimum bit width v.
    min_bits: u32,
    /// Maximum bit width V.
    max_bits: u32,
    /// `anchored` (sweeps v..=V) or `literal` (the formula as printed, 0..=V−v).
    #[arg(long, default_value = "anchored")]
    mode: String,
    /// Initial learning rate of the cosine schedule.
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Optimizer steps per epoch for the learning-rate column.
    #[arg(long, default_value_t = 1)]
    steps_per_epoch: usize,
}

/// Rows `epoch,bits,lr`, the learning rate taken at each epoch's first step.
pub fn rows(args: &ScheduleArgs) -> Result<Vec<(usize, u32, f64)>, CliError> {
    let mode: ScheduleMode = args.mode.parse()?;
    let cycle = CycleConfig::new(args.epochs, args.cycles, args.min_bits, args.max_bits, mode)?;
    if args.steps_per_epoch == 0 {
        return Err(CliError::usage("steps-per-epoch must be at least 1"));
    }
    let lr = LrConfig::new(args.lr, args.epochs * args.steps_per_epoch, 0.0)?;
    (0..args.epochs)
        .map(|e| Ok((e, precision_at(e, &cycle)?, lr_at(e * args.steps_per_epoch, &lr)?)))
        .collect()
}

pub fn run(args: &ScheduleArgs) -> Result<(), CliError> {
    let rows = rows(args)?;
    let mut out = io::BufWriter::new(io::stdout().lock());
    writeln!(out, "epoch,bits,lr")?;
    for (e, bits, lr) in rows {
        writeln!(out, "{e},{bits},{lr}")?;
    }
    out.flush()?;
    Ok(())
}
