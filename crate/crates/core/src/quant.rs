//! Quantization math: the sign binarizer, the static lattice quantizer,
//! weight standardization and the numerical quantization-error integral.

use crate::error::{Error, Result};
use crate::tensor::{stats_f64, Tensor};

/// `-1` for negative input, `+1` otherwise (zero maps to `+1`).
pub fn sign(x: f32) -> Result<f32> {
    if x.is_nan() {
        return Err(Error::NonFiniteInput);
    }
    Ok(sign_unchecked(x))
}

#[inline]
pub(crate) fn sign_unchecked(x: f32) -> f32 {
    if x < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Elementwise [`sign`]. Tensors are finite by construction.
pub fn sign_tensor(t: &Tensor) -> Tensor {
    t.map(sign_unchecked)
}

/// Bit width and clamp range of the static quantizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantSpec {
    bits: u32,
    min: f64,
    max: f64,
}

impl QuantSpec {
    pub fn new(bits: u32, min: f64, max: f64) -> Result<Self> {
        if !(1..=32).contains(&bits) {
            return Err(Error::InvalidQuantSpec(format!("bits {bits} not in [1, 32]")));
        }
        if !(min.is_finite() && max.is_finite() && min < max) {
            return Err(Error::InvalidQuantSpec(format!("need min < max, got [{min}, {max}]")));
        }
        Ok(QuantSpec { bits, min, max })
    }

    /// The `[-1, 1]` spec; at one bit it reproduces [`sign`].
    pub fn symmetric_unit(bits: u32) -> Result<Self> {
        Self::new(bits, -1.0, 1.0)
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn min(&self) -> f64 {
        self.min
    }

    pub fn max(&self) -> f64 {
        self.max
    }

    /// Number of lattice intervals, `2^p − 1`.
    pub fn levels(&self) -> f64 {
        ((1u64 << self.bits) - 1) as f64
    }

    /// `m + ⌊(x−m)(2^p−1)/(M−m) + ½⌋·(M−m)/(2^p−1)` after clamping `x` to `[m, M]`.
    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        let x = x.clamp(self.min, self.max);
        let span = self.max - self.min;
        let levels = self.levels();
        let k = ((x - self.min) * levels / span + 0.5).floor();
        self.min + k * span / levels
    }

    /// The `k`-th lattice point, `0 ≤ k ≤ 2^p − 1`.
    pub fn lattice_point(&self, k: u64) -> f64 {
        self.min + k as f64 * (self.max - self.min) / self.levels()
    }
}

/// Static quantizer applied to one value.
pub fn quantize(x: f64, spec: &QuantSpec) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::NonFiniteInput);
    }
    Ok(spec.apply(x))
}

/// Static quantizer applied elementwise, rounded back to `f32`.
pub fn quantize_tensor(t: &Tensor, spec: &QuantSpec) -> Tensor {
    t.map(|v| spec.apply(v as f64) as f32)
}

/// Divides by the population standard deviation; no mean subtraction.
pub fn standardize(w: &Tensor) -> Result<Tensor> {
    let (_, std) = stats_f64(w.data())?;
    if std == 0.0 || !std.is_finite() {
        return Err(Error::ZeroVarianceWeights);
    }
    Ok(w.map(|v| (v as f64 / std) as f32))
}

/// Unnormalized Gaussian `A·exp(−(w−μ)²/(2σ²))` fitted to a weight histogram.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianFit {
    pub amplitude: f64,
    pub mean: f64,
    pub sigma: f64,
}

impl GaussianFit {
    pub fn new(amplitude: f64, mean: f64, sigma: f64) -> Result<Self> {
        if !(amplitude > 0.0 && sigma > 0.0 && amplitude.is_finite() && sigma.is_finite() && mean.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "gaussian fit needs A > 0 and σ > 0, got A={amplitude}, μ={mean}, σ={sigma}"
            )));
        }
        Ok(GaussianFit { amplitude, mean, sigma })
    }

    #[inline]
    pub fn density(&self, w: f64) -> f64 {
        let z = (w - self.mean) / self.sigma;
        self.amplitude * (-0.5 * z * z).exp()
    }
}

/// Least-squares Gaussian fit to the density-normalized histogram of `values`
/// (`bins` equal-width bins spanning the data), by Levenberg–Marquardt from
/// moment estimates. Fails with `zero-variance-weights` when the values do
/// not spread over at least three bins.
pub fn fit_gaussian_histogram(values: &[f32], bins: usize) -> Result<GaussianFit> {
    if values.is_empty() {
        return Err(Error::EmptyTensor);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    let lo = values.iter().copied().fold(f32::INFINITY, f32::min) as f64;
    let hi = values.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let bins = bins.max(3);
    if !(hi > lo) {
        return Err(Error::ZeroVarianceWeights);
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        counts[(((v as f64 - lo) / width) as usize).min(bins - 1)] += 1;
    }
    if counts.iter().filter(|&&c| c > 0).count() < 3 {
        return Err(Error::ZeroVarianceWeights);
    }
    let n = values.len() as f64;
    let xs: Vec<f64> = (0..bins).map(|b| lo + (b as f64 + 0.5) * width).collect();
    let ys: Vec<f64> = counts.iter().map(|&c| c as f64 / (n * width)).collect();

    let (mean, var) = stats_f64(values)?;
    let mut p = [ys.iter().copied().fold(0.0, f64::max), mean, var.sqrt().max(width)];
    let sse = |p: &[f64; 3]| -> f64 {
        xs.iter().zip(&ys).map(|(&x, &y)| (y - p[0] * (-0.5 * ((x - p[1]) / p[2]).powi(2)).exp()).powi(2)).sum()
    };
    let mut err = sse(&p);
    let mut damping = 1e-3;
    for _ in 0..200 {
        let mut jtj = [[0.0f64; 3]; 3];
        let mut jtr = [0.0f64; 3];
        for (&x, &y) in xs.iter().zip(&ys) {
            let z = (x - p[1]) / p[2];
            let e = (-0.5 * z * z).exp();
            let j = [e, p[0] * e * z / p[2], p[0] * e * z * z / p[2]];
            let r = y - p[0] * e;
            for a in 0..3 {
                jtr[a] += j[a] * r;
                for b in 0..3 {
                    jtj[a][b] += j[a] * j[b];
                }
            }
        }
        let mut improved = false;
        while damping < 1e12 {
            let mut m = jtj;
            for (d, row) in m.iter_mut().enumerate() {
                row[d] *= 1.0 + damping;
            }
            let Some(delta) = solve3(m, jtr) else {
                damping *= 10.0;
                continue;
            };
            let cand = [p[0] + delta[0], p[1] + delta[1], p[2] + delta[2]];
            let cand_err = if cand[0] > 0.0 && cand[2] > 0.0 { sse(&cand) } else { f64::INFINITY };
            if cand_err < err {
                let converged = (err - cand_err) <= 1e-14 * err.max(1e-300);
                p = cand;
                err = cand_err;
                damping = (damping / 10.0).max(1e-12);
                improved = !converged;
                break;
            }
            damping *= 10.0;
        }
        if !improved {
            break;
        }
    }
    GaussianFit::new(p[0], p[1], p[2]).map_err(|_| Error::ZeroVarianceWeights)
}

fn solve3(mut m: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3).max_by(|&a, &c| m[a][col].abs().total_cmp(&m[c][col].abs()))?;
        if m[pivot][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..3 {
            let f = m[row][col] / m[col][col];
            for k in col..3 {
                m[row][k] -= f * m[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let tail: f64 = (row + 1..3).map(|k| m[row][k] * x[k]).sum();
        x[row] = (b[row] - tail) / m[row][row];
    }
    Some(x)
}

/// Point at which the density is evaluated inside the error integral.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DensityAt {
    /// `f(Q(w))`, the form used for the published table.
    #[default]
    Quantized,
    /// `f(w)`, the textbook expectation.
    Weight,
}

/// Parameters of the quantization-error integral.
///
/// The integral runs over `[lo, hi]`; the quantizer lattice spans
/// `[quant_min, quant_max]`, which is `[-1, 1]` by default so that one bit
/// coincides with the sign binarizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QeConfig {
    pub alpha: f64,
    pub lo: f64,
    pub hi: f64,
    pub steps: usize,
    pub quant_min: f64,
    pub quant_max: f64,
    pub density_at: DensityAt,
}

impl Default for QeConfig {
    fn default() -> Self {
        QeConfig {
            alpha: 1.0,
            lo: -15.0,
            hi: 15.0,
            steps: 300_000,
            quant_min: -1.0,
            quant_max: 1.0,
            density_at: DensityAt::Quantized,
        }
    }
}

impl QeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo < self.hi) {
            return Err(Error::InvalidConfig(format!("integration range [{}, {}]", self.lo, self.hi)));
        }
        if self.steps < 1000 {
            return Err(Error::InvalidConfig(format!("steps {} < 1000", self.steps)));
        }
        if !self.alpha.is_finite() {
            return Err(Error::InvalidConfig("alpha must be finite".into()));
        }
        Ok(())
    }
}

/// Composite-midpoint estimate of
/// `∫ f(Q(w)) · (Q(w) − α·sign(Q(w)))² dw` over `[lo, hi]`.
///
/// Midpoints never coincide with `w = 0` for an even step count over a
/// symmetric range, so the sign discontinuity is never sampled.
pub fn quantization_error(fit: &GaussianFit, bits: u32, cfg: &QeConfig) -> Result<f64> {
    cfg.validate()?;
    let spec = QuantSpec::new(bits, cfg.quant_min, cfg.quant_max)?;
    let h = (cfg.hi - cfg.lo) / cfg.steps as f64;
    let mut total = 0.0f64;
    for i in 0..cfg.steps {
        let w = cfg.lo + (i as f64 + 0.5) * h;
        let q = spec.apply(w);
        let s = if q < 0.0 { -1.0 } else { 1.0 };
        let f = match cfg.density_at {
            DensityAt::Quantized => fit.density(q),
            DensityAt::Weight => fit.density(w),
        };
        let d = q - cfg.alpha * s;
        total += f * d * d;
    }
    let qe = total * h;
    if !qe.is_finite() {
        return Err(Error::IntegrationFailure(format!("non-finite result {qe}")));
    }
    Ok(qe)
}

/// The sixteen per-layer Gaussian fits of a trained binary ResNet-18,
/// as `(amplitude, mean, sigma)`, labelled `a`..`p`.
pub const RESNET18_LAYER_FITS: [(f64, f64, f64); 16] = [
    (0.50, -0.11, 0.38),
    (0.57, 0.14, 0.35),
    (0.66, 0.05, 0.30),
    (0.67, -0.05, 0.28),
    (0.61, -0.15, 0.29),
    (0.57, -0.04, 0.37),
    (0.64, 0.11, 0.34),
    (0.58, -0.20, 0.38),
    (0.49, -0.19, 0.47),
    (0.42, -0.08, 0.61),
    (0.40, 0.17, 0.67),
    (0.41, 0.15, 0.65),
    (0.42, 0.13, 0.60),
    (0.35, 0.09, 0.70),
    (0.40, 0.14, 0.57),
    (0.39, -0.02, 0.59),
];

/// Published quantization errors for bits 2..=12 (rows) and fits `a`..`p` (columns).
pub const RESNET18_QE_TABLE: [[f64; 16]; 11] = [
    [0.192, 0.205, 0.214, 0.205, 0.189, 0.218, 0.227, 0.216, 0.210, 0.216, 0.194, 0.197, 0.210, 0.216, 0.194, 0.197],
    [0.240, 0.259, 0.287, 0.280, 0.247, 0.276, 0.291, 0.264, 0.249, 0.248, 0.224, 0.228, 0.249, 0.248, 0.224, 0.228],
    [0.248, 0.267, 0.298, 0.292, 0.256, 0.285, 0.301, 0.272, 0.256, 0.253, 0.230, 0.233, 0.256, 0.253, 0.229, 0.233],
    [0.249, 0.269, 0.301, 0.294, 0.258, 0.287, 0.303, 0.273, 0.257, 0.254, 0.231, 0.234, 0.257, 0.254, 0.231, 0.234],
    [0.250, 0.270, 0.301, 0.295, 0.258, 0.288, 0.304, 0.274, 0.258, 0.255, 0.231, 0.234, 0.258, 0.255, 0.231, 0.234],
    [0.250, 0.270, 0.301, 0.295, 0.259, 0.288, 0.304, 0.274, 0.258, 0.255, 0.231, 0.234, 0.258, 0.255, 0.231, 0.234],
    [0.250, 0.270, 0.301, 0.295, 0.259, 0.288, 0.304, 0.274, 0.258, 0.255, 0.231, 0.234, 0.258, 0.255, 0.231, 0.234],
    [0.250, 0.270, 0.301, 0.295, 0.259, 0.288, 0.304, 0.274, 0.258, 0.255, 0.231, 0.234, 0.258, 0.255, 0.231, 0.234],
    [0.250, 0.270, 0.301, 0.295, 0.259, 0.288, 0.304, 0.274, 0.258, 0.255, 0.231, 0.234, 0.258, 0.255, 0.231, 0.235],
    [0.250, 0.270, 0.301, 0.295, 0.259, 0.288, 0.304, 0.274, 0.258, 0.255, 0.231, 0.234, 0.258, 0.255, 0.231, 0.234],
    [0.250, 0.270, 0.301, 0.295, 0.259, 0.288, 0.304, 0.274, 0.258, 0.255, 0.231, 0.234, 0.258, 0.255, 0.231, 0.234],
];
