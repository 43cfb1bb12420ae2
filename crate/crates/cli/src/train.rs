use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use cyclebnn::metrics::{run_report, Accounting};
use cyclebnn::nn::checkpoint::save_checkpoint;
use cyclebnn::nn::Network;
use cyclebnn::train::{accuracy, predict, TrainOptions, Trainer};

use crate::config::TrainConfig;
use crate::report;
use crate::CliError;

pub const METRICS_HEADER: &str = "epoch,bits,lr,loss,train_acc,test_acc,cum_training_macs";
pub const CHECKPOINT_FILE: &str = "model.cbnn";
pub const EVAL_CHUNK: usize = 256;

pub fn run(config_path: &Path) -> Result<(), CliError> {
    let cfg = TrainConfig::load(config_path)?;
    let data = cfg.data()?;
    let classes = data.train.classes.max(data.test.classes);
    let dims = data.train.sample_dims();
    let specs = cfg.layers(dims, classes);
    let net = Network::new(&specs, &dims, cfg.seed, cfg.binarize_first_last)?;

    let cycle = cfg.cycle()?;
    let opts = TrainOptions {
        cycle,
        lr: cfg.lr,
        min_lr: cfg.min_lr,
        batch_size: cfg.batch_size,
        adamw: cfg.adamw(),
        shuffle_seed: cfg.seed,
        grad_bits: cfg.grad_bits(),
        plain_ste: false,
    };
    let cost = run_report(
        &cycle.sequence()?,
        &specs,
        &dims,
        data.train.len() as u64,
        cfg.batch_size,
        Accounting::BinaryForward { grad_bits: cfg.grad_bits().unwrap_or(32) },
    )?;

    let out_dir = cfg.out_dir();
    fs::create_dir_all(&out_dir)?;
    let mut trainer = Trainer::new(net, opts, data.train.len())?;
    let mut csv = format!("{METRICS_HEADER}\n");
    for epoch in 0..cfg.epochs {
        let stats = trainer.train_epoch(&data.train, epoch).map_err(|e| match e.code() {
            "diverged" | "non-finite-gradient" => CliError::numerical(format!("diverged: {e}")),
            _ => e.into(),
        })?;
        let test_acc = accuracy(&predict(trainer.network(), &data.test, EVAL_CHUNK)?, &data.test.labels);
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            epoch, stats.bits, stats.lr, stats.loss, stats.train_accuracy, test_acc, cost.cumulative_macs[epoch]
        );
        eprintln!(
            "epoch {epoch:>4}  bits {}  loss {:.5}  train {:.4}  test {:.4}",
            stats.bits, stats.loss, stats.train_accuracy, test_acc
        );
    }
    fs::write(out_dir.join("metrics.csv"), csv)?;
    save_checkpoint(&out_dir.join(CHECKPOINT_FILE), trainer.network(), cfg.binarize_first_last)?;
    fs::write(out_dir.join("cost_report.csv"), report::to_csv(&cost))?;
    fs::write(out_dir.join("cost_report.txt"), report::to_text(&cost))?;
    println!("wrote {}", out_dir.display());
    Ok(())
}
