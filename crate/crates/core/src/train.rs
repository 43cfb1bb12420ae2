//! Training loop with per-epoch cyclic backward precision and a cosine
//! learning-rate schedule over steps.

use crate::data::{batches, Dataset};
use crate::error::{Error, Result};
use crate::nn::{softmax_cross_entropy, Network, PrecisionContext};
use crate::optim::{AdamW, AdamWConfig};
use crate::schedule::{lr_at, precision_at, CycleConfig, LrConfig};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub cycle: CycleConfig,
    pub lr: f64,
    pub min_lr: f64,
    pub batch_size: usize,
    pub adamw: AdamWConfig,
    pub shuffle_seed: u64,
    /// Loss-gradient width; `None` leaves gradients unquantized.
    pub grad_bits: Option<u32>,
    /// Ignore the schedule and use a plain straight-through estimator.
    pub plain_ste: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub bits: u32,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
    /// Mean loss over the epoch's samples.
    pub loss: f64,
    pub train_accuracy: f64,
}

pub struct Trainer {
    net: Network,
    opt: AdamW,
    opts: TrainOptions,
    lr_cfg: LrConfig,
    step: usize,
    steps_per_epoch: usize,
}

impl Trainer {
    pub fn new(net: Network, opts: TrainOptions, train_len: usize) -> Result<Self> {
        opts.cycle.validate()?;
        if opts.batch_size == 0 || train_len == 0 {
            return Err(Error::InvalidConfig("batch size and training set must be non-empty".into()));
        }
        let steps_per_epoch = train_len.div_ceil(opts.batch_size);
        let lr_cfg = LrConfig::new(opts.lr, steps_per_epoch * opts.cycle.total_epochs, opts.min_lr)?;
        Ok(Trainer { net, opt: AdamW::new(opts.adamw)?, opts, lr_cfg, step: 0, steps_per_epoch })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn into_network(self) -> Network {
        self.net
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.steps_per_epoch
    }

    pub fn context(&self, epoch: usize) -> Result<(u32, PrecisionContext)> {
        if self.opts.plain_ste {
            return Ok((32, PrecisionContext::plain_ste()));
        }
        let bits = precision_at(epoch, &self.opts.cycle)?;
        Ok((bits, PrecisionContext::new(bits)?.with_grad_bits(self.opts.grad_bits)?))
    }

    /// One optimizer step on a batch; returns `(mean loss, correct count)`.
    pub fn step(&mut self, x: &Tensor, labels: &[usize], ctx: &PrecisionContext) -> Result<(f64, usize)> {
        let lr = lr_at(self.step, &self.lr_cfg)?;
        self.net.zero_grad();
        let logits = self.net.forward(x, ctx)?;
        let (loss, grad) = softmax_cross_entropy(&logits, labels)?;
        if !loss.is_finite() {
            return Err(Error::Diverged(format!("loss {loss} at step {}", self.step)));
        }
        self.net.backward(&grad, ctx)?;
        self.opt.step(&mut self.net.params_mut(), lr)?;
        self.step += 1;
        Ok((loss, correct(&logits, labels)))
    }

    pub fn train_epoch(&mut self, train: &Dataset, epoch: usize) -> Result<EpochStats> {
        let (bits, ctx) = self.context(epoch)?;
        let mut loss_sum = 0.0;
        let mut hits = 0;
        let mut lr = self.opts.lr;
        for batch in batches(train.len(), self.opts.batch_size, self.opts.shuffle_seed, epoch)? {
            let (x, y) = train.gather(&batch)?;
            lr = lr_at(self.step, &self.lr_cfg)?;
            let (loss, c) = self.step(&x, &y, &ctx)?;
            loss_sum += loss * batch.len() as f64;
            hits += c;
        }
        Ok(EpochStats {
            epoch,
            bits,
            lr,
            loss: loss_sum / train.len() as f64,
            train_accuracy: hits as f64 / train.len() as f64,
        })
    }
}

fn correct(logits: &Tensor, labels: &[usize]) -> usize {
    let k = logits.dims()[1];
    logits.data().chunks_exact(k).zip(labels).filter(|(row, &l)| argmax(row) == l).count()
}

/// Index of the first maximum.
pub fn argmax(row: &[f32]) -> usize {
    row.iter().enumerate().fold(0, |best, (i, &v)| if v > row[best] { i } else { best })
}

/// Evaluation-mode logits for a whole dataset, computed in chunks.
pub fn predict(net: &Network, d: &Dataset, chunk: usize) -> Result<Tensor> {
    predict_with(|x| net.infer(x), d, chunk)
}

pub fn predict_with(f: impl Fn(&Tensor) -> Result<Tensor>, d: &Dataset, chunk: usize) -> Result<Tensor> {
    let mut out = Vec::new();
    let mut k = 0;
    let idx: Vec<usize> = (0..d.len()).collect();
    for part in idx.chunks(chunk.max(1)) {
        let (x, _) = d.gather(part)?;
        let logits = f(&x)?;
        k = logits.dims()[1];
        out.extend_from_slice(logits.data());
    }
    Tensor::new(&[d.len(), k], out)
}

pub fn accuracy(logits: &Tensor, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    correct(logits, labels) as f64 / labels.len() as f64
}
