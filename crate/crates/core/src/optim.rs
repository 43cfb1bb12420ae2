//! AdamW with decoupled weight decay.

use crate::error::{Error, Result};
use crate::nn::Parameter;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-4 }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0
            && self.weight_decay.is_finite();
        if !ok {
            return Err(Error::InvalidConfig(format!("invalid AdamW hyperparameters {self:?}")));
        }
        Ok(())
    }
}

/// Optimizer state: first and second moments per parameter, in the order
/// parameters are passed to [`AdamW::step`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    config: AdamWConfig,
    m: Vec<Vec<f64>>,
    s: Vec<Vec<f64>>,
    t: u64,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Result<Self> {
        config.validate()?;
        Ok(AdamW { config, m: Vec::new(), s: Vec::new(), t: 0 })
    }

    pub fn config(&self) -> &AdamWConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update: `w ← w − lr·(m̂/(√ŝ + eps) + weight_decay·w)`.
    ///
    /// Nothing is modified if any gradient is non-finite.
    pub fn step(&mut self, params: &mut [&mut Parameter], lr: f64) -> Result<()> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning rate {lr} must be positive")));
        }
        if let Some(p) = params.iter().find(|p| !p.grad.all_finite()) {
            return Err(Error::NonFiniteGradient(p.name.clone()));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.real.len()]).collect();
            self.s = self.m.clone();
        }
        if self.m.len() != params.len() || self.m.iter().zip(params.iter()).any(|(m, p)| m.len() != p.real.len()) {
            return Err(Error::IncompatibleShapes("parameter set changed between optimizer steps".into()));
        }
        self.t += 1;
        let AdamWConfig { beta1, beta2, eps, weight_decay } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for ((p, m), s) in params.iter_mut().zip(&mut self.m).zip(&mut self.s) {
            let grads = p.grad.data().to_vec();
            for (((w, g), m), s) in p.real.data_mut().iter_mut().zip(grads).zip(m.iter_mut()).zip(s.iter_mut()) {
                let g = g as f64;
                *m = beta1 * *m + (1.0 - beta1) * g;
                *s = beta2 * *s + (1.0 - beta2) * g * g;
                let m_hat = *m / c1;
                let s_hat = *s / c2;
                let w64 = *w as f64;
                *w = (w64 - lr * (m_hat / (s_hat.sqrt() + eps) + weight_decay * w64)) as f32;
            }
        }
        Ok(())
    }
}
