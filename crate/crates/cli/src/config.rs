use std::path::{Path, PathBuf};

use cyclebnn::data::{load_idx, synth_dataset, Dataset};
use cyclebnn::nn::{convnet_small, LayerSpec};
use cyclebnn::optim::AdamWConfig;
use cyclebnn::schedule::{CycleConfig, ScheduleMode};
use serde::Deserialize;

use crate::CliError;

/// Training configuration, read from a flat TOML file. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "defaults::arch")]
    pub arch: String,
    pub epochs: usize,
    #[serde(default = "defaults::cycles")]
    pub cycles: usize,
    #[serde(default = "defaults::min_bits")]
    pub min_bits: u32,
    #[serde(default = "defaults::max_bits")]
    pub max_bits: u32,
    #[serde(default = "defaults::schedule_mode")]
    pub schedule_mode: String,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::lr")]
    pub lr: f64,
    #[serde(default)]
    pub min_lr: f64,
    #[serde(default = "defaults::beta1")]
    pub beta1: f64,
    #[serde(default = "defaults::beta2")]
    pub beta2: f64,
    #[serde(default = "defaults::weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "defaults::eps")]
    pub eps: f64,
    #[serde(default = "defaults::seed")]
    pub seed: u64,
    /// Loss-gradient width in the backward pass; 0 disables gradient quantization.
    #[serde(default = "defaults::grad_bits")]
    pub grad_bits: u32,
    #[serde(default)]
    pub binarize_first_last: bool,

    /// Synthetic dataset: `synth_n` training samples and `synth_test_n` test samples.
    pub synth_n: Option<usize>,
    pub synth_test_n: Option<usize>,
    /// IDX dataset; relative paths resolve against the config file's directory.
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    /// Keep only the first `train_limit` training samples.
    pub train_limit: Option<usize>,

    pub out_dir: PathBuf,

    #[serde(skip)]
    base_dir: PathBuf,
}

mod defaults {
    pub fn arch() -> String {
        "convnet-small".into()
    }
    pub fn cycles() -> usize {
        8
    }
    pub fn min_bits() -> u32 {
        2
    }
    pub fn max_bits() -> u32 {
        6
    }
    pub fn schedule_mode() -> String {
        "anchored".into()
    }
    pub fn batch_size() -> usize {
        16
    }
    pub fn lr() -> f64 {
        1e-3
    }
    pub fn beta1() -> f64 {
        0.9
    }
    pub fn beta2() -> f64 {
        0.999
    }
    pub fn weight_decay() -> f64 {
        1e-4
    }
    pub fn eps() -> f64 {
        1e-8
    }
    pub fn seed() -> u64 {
        1
    }
    pub fn grad_bits() -> u32 {
        8
    }
}

pub struct Data {
    pub train: Dataset,
    pub test: Dataset,
}

impl TrainConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: TrainConfig =
            toml::from_str(&text).map_err(|e| CliError::usage(format!("invalid config {}: {e}", path.display())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.resolve(&self.out_dir)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.arch != "convnet-small" {
            return Err(CliError::usage(format!("unknown arch `{}` (supported: convnet-small)", self.arch)));
        }
        self.cycle()?;
        self.adamw().validate()?;
        if self.batch_size == 0 {
            return Err(CliError::usage("batch_size must be at least 1"));
        }
        if self.grad_bits > 32 {
            return Err(CliError::usage(format!("grad_bits {} not in [0, 32]", self.grad_bits)));
        }
        let idx = [&self.train_images, &self.train_labels, &self.test_images, &self.test_labels];
        match (self.synth_n, idx.iter().filter(|p| p.is_some()).count()) {
            (Some(_), 0) | (None, 4) => Ok(()),
            (Some(_), _) => Err(CliError::usage("set either synth_n or the IDX paths, not both")),
            (None, _) => Err(CliError::usage(
                "dataset needs synth_n or all of train_images, train_labels, test_images, test_labels",
            )),
        }
    }

    pub fn mode(&self) -> Result<ScheduleMode, CliError> {
        Ok(self.schedule_mode.parse()?)
    }

    pub fn cycle(&self) -> Result<CycleConfig, CliError> {
        Ok(CycleConfig::new(self.epochs, self.cycles, self.min_bits, self.max_bits, self.mode()?)?)
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig { beta1: self.beta1, beta2: self.beta2, eps: self.eps, weight_decay: self.weight_decay }
    }

    pub fn grad_bits(&self) -> Option<u32> {
        (self.grad_bits > 0).then_some(self.grad_bits)
    }

    pub fn data(&self) -> Result<Data, CliError> {
        let (mut train, test) = match self.synth_n {
            Some(n) => {
                let test_n = self.synth_test_n.unwrap_or((n / 4).max(2));
                synth_dataset(n + test_n, self.seed)?.split(n)?
            }
            None => {
                let p = |o: &Option<PathBuf>| self.resolve(o.as_deref().expect("validated"));
                (
                    load_idx(&p(&self.train_images), &p(&self.train_labels))?,
                    load_idx(&p(&self.test_images), &p(&self.test_labels))?,
                )
            }
        };
        if let Some(limit) = self.train_limit {
            if limit < train.len() {
                train = train.split(limit)?.0;
            }
        }
        if train.sample_dims() != test.sample_dims() {
            return Err(CliError::usage("train and test images differ in shape"));
        }
        Ok(Data { train, test })
    }

    pub fn layers(&self, sample_dims: [usize; 3], classes: usize) -> Vec<LayerSpec> {
        convnet_small(sample_dims, classes, self.binarize_first_last)
    }
}
