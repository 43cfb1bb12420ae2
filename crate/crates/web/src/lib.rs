//! wasm-bindgen bindings behind the static demo page in `www/`.
//!
//! The plain functions return `Result<_, String>` so they can be tested
//! natively; the `#[wasm_bindgen]` wrappers only convert errors.

use cyclebnn::quant::{quantization_error, GaussianFit, QeConfig, QuantSpec};
use cyclebnn::schedule::{lr_at, CycleConfig, LrConfig, ScheduleMode};
use wasm_bindgen::prelude::*;

/// Upper bound on plotted points, to keep the page responsive.
pub const MAX_POINTS: usize = 20_000;

/// Quadrature panels used for the interactive error curves.
pub const DEMO_QE_STEPS: usize = 30_000;

/// Per-epoch backward bit widths of a cyclic precision schedule.
pub fn schedule_curve(epochs: usize, cycles: usize, min_bits: u32, max_bits: u32, mode: &str) -> Result<Vec<u32>, String> {
    if epochs > MAX_POINTS {
        return Err(format!("at most {MAX_POINTS} epochs"));
    }
    let mode: ScheduleMode = mode.parse().map_err(|e: cyclebnn::Error| e.to_string())?;
    let cfg = CycleConfig::new(epochs, cycles, min_bits, max_bits, mode).map_err(|e| e.to_string())?;
    cfg.sequence().map_err(|e| e.to_string())
}

/// Cosine learning rate at the start of each epoch, one step per epoch.
pub fn lr_curve(epochs: usize, initial_lr: f64) -> Result<Vec<f64>, String> {
    if epochs > MAX_POINTS {
        return Err(format!("at most {MAX_POINTS} epochs"));
    }
    let cfg = LrConfig::new(initial_lr, epochs, 0.0).map_err(|e| e.to_string())?;
    (0..epochs).map(|e| lr_at(e, &cfg).map_err(|e| e.to_string())).collect()
}

/// Quantization error of one Gaussian weight fit for bit widths `1..=max_bits`.
pub fn qe_curve(amplitude: f64, mean: f64, sigma: f64, max_bits: u32, weight_density: bool) -> Result<Vec<f64>, String> {
    let fit = GaussianFit::new(amplitude, mean, sigma).map_err(|e| e.to_string())?;
    if !(1..=16).contains(&max_bits) {
        return Err("max_bits must be in 1..=16".into());
    }
    let cfg = QeConfig {
        steps: DEMO_QE_STEPS,
        density_at: if weight_density {
            cyclebnn::quant::DensityAt::Weight
        } else {
            cyclebnn::quant::DensityAt::Quantized
        },
        ..QeConfig::default()
    };
    (1..=max_bits).map(|b| quantization_error(&fit, b, &cfg).map_err(|e| e.to_string())).collect()
}

/// Interleaved `[x0, q(x0), x1, q(x1), ...]` for `samples` points evenly spaced on `[lo, hi]`,
/// quantized to `bits` over the clamp range `[-1, 1]`.
pub fn quantizer_staircase(bits: u32, lo: f64, hi: f64, samples: usize) -> Result<Vec<f64>, String> {
    let spec = QuantSpec::symmetric_unit(bits).map_err(|e| e.to_string())?;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(format!("need lo < hi, got [{lo}, {hi}]"));
    }
    if !(2..=MAX_POINTS).contains(&samples) {
        return Err(format!("samples must be in 2..={MAX_POINTS}"));
    }
    let mut out = Vec::with_capacity(2 * samples);
    for i in 0..samples {
        let x = lo + (hi - lo) * i as f64 / (samples - 1) as f64;
        out.push(x);
        out.push(spec.apply(x));
    }
    Ok(out)
}

fn js(e: String) -> JsError {
    JsError::new(&e)
}

#[wasm_bindgen(js_name = scheduleCurve)]
pub fn schedule_curve_js(epochs: usize, cycles: usize, min_bits: u32, max_bits: u32, mode: &str) -> Result<Vec<u32>, JsError> {
    schedule_curve(epochs, cycles, min_bits, max_bits, mode).map_err(js)
}

#[wasm_bindgen(js_name = lrCurve)]
pub fn lr_curve_js(epochs: usize, initial_lr: f64) -> Result<Vec<f64>, JsError> {
    lr_curve(epochs, initial_lr).map_err(js)
}

#[wasm_bindgen(js_name = qeCurve)]
pub fn qe_curve_js(amplitude: f64, mean: f64, sigma: f64, max_bits: u32, weight_density: bool) -> Result<Vec<f64>, JsError> {
    qe_curve(amplitude, mean, sigma, max_bits, weight_density).map_err(js)
}

#[wasm_bindgen(js_name = quantizerStaircase)]
pub fn quantizer_staircase_js(bits: u32, lo: f64, hi: f64, samples: usize) -> Result<Vec<f64>, JsError> {
    quantizer_staircase(bits, lo, hi, samples).map_err(js)
}
