//! Per-epoch backward precision and the cosine learning-rate schedule.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScheduleMode {
    /// `⌊(v + (V+1−v)·e·c/N) mod (V+1−v)⌋`, exactly as the formula is printed.
    /// Emits `0..=V−v`.
    Literal,
    /// `v + ⌊((V+1−v)·e·c/N) mod (V+1−v)⌋`: sweeps `v..=V`, `c` times.
    #[default]
    Anchored,
}

impl FromStr for ScheduleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(ScheduleMode::Literal),
            "anchored" => Ok(ScheduleMode::Anchored),
            other => Err(Error::InvalidConfig(format!(
                "schedule mode must be `anchored` or `literal`, got `{other}`"
            ))),
        }
    }
}

impl fmt::Display for ScheduleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScheduleMode::Literal => "literal",
            ScheduleMode::Anchored => "anchored",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CycleConfig {
    pub total_epochs: usize,
    pub cycles: usize,
    pub min_bits: u32,
    pub max_bits: u32,
    pub mode: ScheduleMode,
}

impl CycleConfig {
    pub fn new(total_epochs: usize, cycles: usize, min_bits: u32, max_bits: u32, mode: ScheduleMode) -> Result<Self> {
        let cfg = CycleConfig { total_epochs, cycles, min_bits, max_bits, mode };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_epochs == 0 {
            return Err(Error::InvalidConfig("total epochs must be ≥ 1".into()));
        }
        if self.cycles == 0 || self.cycles > self.total_epochs {
            return Err(Error::InvalidConfig(format!(
                "cycles must be in [1, {}], got {}",
                self.total_epochs, self.cycles
            )));
        }
        if !(1 <= self.min_bits && self.min_bits <= self.max_bits && self.max_bits <= 8) {
            return Err(Error::InvalidConfig(format!(
                "need 1 ≤ min_bits ≤ max_bits ≤ 8, got {}..{}",
                self.min_bits, self.max_bits
            )));
        }
        Ok(())
    }

    /// The full per-epoch sequence.
    pub fn sequence(&self) -> Result<Vec<u32>> {
        (0..self.total_epochs).map(|e| precision_at(e, self)).collect()
    }
}

/// Backward-pass bit width for epoch `e`.
///
/// Evaluated in exact integer arithmetic: for `x ≥ 0` and integer `r`,
/// `⌊x mod r⌋ = ⌊x⌋ mod r`.
pub fn precision_at(epoch: usize, cfg: &CycleConfig) -> Result<u32> {
    cfg.validate()?;
    if epoch >= cfg.total_epochs {
        return Err(Error::EpochOutOfRange { epoch, total: cfg.total_epochs });
    }
    let span = (cfg.max_bits + 1 - cfg.min_bits) as u128;
    let n = cfg.total_epochs as u128;
    let progress = span * epoch as u128 * cfg.cycles as u128;
    let bits = match cfg.mode {
        ScheduleMode::Anchored => cfg.min_bits as u128 + (progress / n) % span,
        ScheduleMode::Literal => ((cfg.min_bits as u128 * n + progress) / n) % span,
    };
    Ok(bits as u32)
}

/// Number of maximal non-decreasing runs in a sequence, i.e. the number of
/// precision cycles it contains.
pub fn count_cycles(bits: &[u32]) -> usize {
    if bits.is_empty() {
        return 0;
    }
    1 + bits.windows(2).filter(|w| w[1] < w[0]).count()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrConfig {
    pub initial_lr: f64,
    pub total_steps: usize,
    pub min_lr: f64,
}

impl LrConfig {
    pub fn new(initial_lr: f64, total_steps: usize, min_lr: f64) -> Result<Self> {
        let cfg = LrConfig { initial_lr, total_steps, min_lr };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("initial lr {} must be > 0", self.initial_lr)));
        }
        if self.total_steps == 0 {
            return Err(Error::InvalidConfig("total steps must be ≥ 1".into()));
        }
        if !(self.min_lr >= 0.0 && self.min_lr < self.initial_lr) {
            return Err(Error::InvalidConfig(format!(
                "need 0 ≤ min lr < initial lr, got {} / {}",
                self.min_lr, self.initial_lr
            )));
        }
        Ok(())
    }
}

/// Cosine annealing: `min + ½(init − min)(1 + cos(π·step/total))`.
pub fn lr_at(step: usize, cfg: &LrConfig) -> Result<f64> {
    cfg.validate()?;
    if step > cfg.total_steps {
        return Err(Error::StepOutOfRange { step, total: cfg.total_steps });
    }
    let phase = PI * step as f64 / cfg.total_steps as f64;
    Ok(cfg.min_lr + 0.5 * (cfg.initial_lr - cfg.min_lr) * (1.0 + phase.cos()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig(mode: ScheduleMode) -> CycleConfig {
        CycleConfig::new(600, 8, 2, 6, mode).unwrap()
    }

    #[test]
    fn anchored_examples() {
        let cfg = fig(ScheduleMode::Anchored);
        assert_eq!(precision_at(0, &cfg).unwrap(), 2);
        assert_eq!(precision_at(74, &cfg).unwrap(), 6);
        assert_eq!(precision_at(75, &cfg).unwrap(), 2);
    }

    #[test]
    fn literal_example() {
        assert_eq!(precision_at(45, &fig(ScheduleMode::Literal)).unwrap(), 0);
    }

    #[test]
    fn epoch_range_checked() {
        let err = precision_at(600, &fig(ScheduleMode::Anchored)).unwrap_err();
        assert_eq!(err.code(), "epoch-out-of-range");
    }

    #[test]
    fn config_validation() {
        assert!(CycleConfig::new(10, 2, 0, 6, ScheduleMode::Anchored).is_err());
        assert!(CycleConfig::new(10, 2, 3, 2, ScheduleMode::Anchored).is_err());
        assert!(CycleConfig::new(10, 2, 2, 9, ScheduleMode::Anchored).is_err());
        assert!(CycleConfig::new(10, 11, 2, 6, ScheduleMode::Anchored).is_err());
        assert!(CycleConfig::new(0, 1, 2, 6, ScheduleMode::Anchored).is_err());
    }

    #[test]
    fn single_epoch_is_min_bits() {
        let cfg = CycleConfig::new(1, 1, 3, 7, ScheduleMode::Anchored).unwrap();
        assert_eq!(cfg.sequence().unwrap(), vec![3]);
    }

    #[test]
    fn mode_parse_round_trip() {
        for m in [ScheduleMode::Literal, ScheduleMode::Anchored] {
            assert_eq!(m.to_string().parse::<ScheduleMode>().unwrap(), m);
        }
        assert!("cosine".parse::<ScheduleMode>().is_err());
    }

    #[test]
    fn cycle_counting() {
        assert_eq!(count_cycles(&[]), 0);
        assert_eq!(count_cycles(&[2, 3, 4, 2, 2, 5, 3]), 3);
    }

    #[test]
    fn lr_examples() {
        let cfg = LrConfig::new(0.001, 100, 0.0).unwrap();
        assert_eq!(lr_at(0, &cfg).unwrap(), 0.001);
        assert!(lr_at(100, &cfg).unwrap().abs() < 1e-18);
        assert!((lr_at(50, &cfg).unwrap() - 0.0005).abs() < 1e-15);
        assert_eq!(lr_at(101, &cfg).unwrap_err().code(), "step-out-of-range");
        let cfg = LrConfig::new(0.01, 10, 0.001).unwrap();
        assert!((lr_at(10, &cfg).unwrap() - 0.001).abs() < 1e-15);
        assert!(LrConfig::new(0.01, 10, 0.01).is_err());
    }
}
