//! Training-cost accounting: raw MAC counts, bit-width-adjusted training
//! MACs and relative memory usage.

use crate::error::{Error, Result};
use crate::nn::LayerSpec;

/// Raw multiply-accumulates of one layer for one sample.
///
/// Convolutions count `c_out·h'·w'·c_in·k²`, linear layers `in·out`, all other layers 0.
pub fn layer_macs(spec: &LayerSpec, input_dims: &[usize]) -> Result<u64> {
    let out = spec.output_dims(input_dims)?;
    Ok(match *spec {
        LayerSpec::FpConv { c_in, kernel, .. } | LayerSpec::BinaryConv { c_in, kernel, .. } => {
            (out[0] * out[1] * out[2] * c_in * kernel * kernel) as u64
        }
        LayerSpec::FpLinear { in_features, out_features }
        | LayerSpec::BinaryLinear { in_features, out_features } => (in_features * out_features) as u64,
        _ => 0,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MacEntry {
    pub name: String,
    pub macs: u64,
    pub bit_a: u32,
    pub bit_b: u32,
    pub multiplicity: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MacLedger {
    entries: Vec<MacEntry>,
}

impl MacLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, entry: MacEntry) -> Result<()> {
        for bits in [entry.bit_a, entry.bit_b] {
            if !(1..=32).contains(&bits) {
                return Err(Error::InvalidConfig(format!("{}: bit width {bits} not in [1, 32]", entry.name)));
            }
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn entries(&self) -> &[MacEntry] {
        &self.entries
    }
}

/// `Σ macs·multiplicity·(bit_a/32)·(bit_b/32)`.
pub fn training_macs(ledger: &MacLedger) -> f64 {
    ledger
        .entries
        .iter()
        .map(|e| e.macs as f64 * e.multiplicity as f64 * (e.bit_a as f64 / 32.0) * (e.bit_b as f64 / 32.0))
        .sum()
}

/// Peak memory, in bits, under a precision regime and under a 32-bit baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MemoryLedger {
    pub used_bits: f64,
    pub baseline_bits: f64,
}

impl MemoryLedger {
    /// `elements` values all stored at `bits`.
    pub fn uniform(elements: u64, bits: u32) -> Self {
        MemoryLedger { used_bits: elements as f64 * bits as f64, baseline_bits: elements as f64 * 32.0 }
    }
}

pub fn memory_usage(ledger: &MemoryLedger) -> Result<f64> {
    if !(ledger.baseline_bits > 0.0) {
        return Err(Error::ZeroBaseline);
    }
    Ok(ledger.used_bits / ledger.baseline_bits)
}

/// Which operand widths each pass is charged at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Accounting {
    /// Forward: binary layers at 1/1 bits, full-precision layers at 32/32.
    /// Backward: two conv-sized blocks per layer; binary layers at
    /// `PS(e)/grad_bits`, full-precision layers at 32/32. Memory: every
    /// stored tensor at `max(PS(e), grad_bits)`.
    BinaryForward { grad_bits: u32 },
    /// Every pass of every layer at `PS(e)/PS(e)`; memory at `PS(e)`.
    Uniform,
}

impl Accounting {
    pub fn describe(&self) -> String {
        match self {
            Accounting::BinaryForward { grad_bits } => format!(
                "forward: binary layers 1/1 bits, fp layers 32/32; backward: 2 blocks per layer, \
                 binary layers PS(e)/{grad_bits} bits, fp layers 32/32; memory: all tensors at max(PS(e), {grad_bits}) bits"
            ),
            Accounting::Uniform => {
                "all passes of all layers at PS(e)/PS(e) bits (forward + 2 backward blocks); memory: all tensors at PS(e) bits"
                    .to_string()
            }
        }
    }

    fn memory_bits(&self, bits: u32) -> u32 {
        match self {
            Accounting::BinaryForward { grad_bits } => bits.max(*grad_bits),
            Accounting::Uniform => bits,
        }
    }
}

/// Number of backward MAC blocks charged per layer (input gradient and weight gradient).
pub const BACKWARD_BLOCKS: u64 = 2;

/// Per-sample ledger for one epoch at backward precision `bits`.
pub fn model_ledger(specs: &[LayerSpec], input_dims: &[usize], bits: u32, accounting: Accounting) -> Result<MacLedger> {
    let mut ledger = MacLedger::new();
    let mut dims = input_dims.to_vec();
    for (i, spec) in specs.iter().enumerate() {
        let macs = layer_macs(spec, &dims)?;
        dims = spec.output_dims(&dims)?;
        if macs == 0 {
            continue;
        }
        let name = format!("{i}.{}", spec.kind());
        let (fwd, bwd) = match accounting {
            Accounting::BinaryForward { grad_bits } if spec.is_binary() => ((1, 1), (bits, grad_bits)),
            Accounting::BinaryForward { .. } => ((32, 32), (32, 32)),
            Accounting::Uniform => ((bits, bits), (bits, bits)),
        };
        ledger.push(MacEntry { name: format!("{name}.forward"), macs, bit_a: fwd.0, bit_b: fwd.1, multiplicity: 1 })?;
        ledger.push(MacEntry {
            name: format!("{name}.backward"),
            macs,
            bit_a: bwd.0,
            bit_b: bwd.1,
            multiplicity: BACKWARD_BLOCKS,
        })?;
    }
    Ok(ledger)
}

/// Values held during one training step of one batch: weights, their
/// gradients, and every layer's activations and activation gradients.
pub fn step_elements(specs: &[LayerSpec], input_dims: &[usize], batch_size: usize) -> Result<u64> {
    let mut dims = input_dims.to_vec();
    let mut weights = 0u64;
    let mut activations = dims.iter().product::<usize>() as u64;
    for spec in specs {
        weights += match *spec {
            LayerSpec::FpConv { c_in, c_out, kernel, .. } | LayerSpec::BinaryConv { c_in, c_out, kernel, .. } => {
                (c_in * c_out * kernel * kernel) as u64
            }
            LayerSpec::FpLinear { in_features, out_features } => (in_features * out_features + out_features) as u64,
            LayerSpec::BinaryLinear { in_features, out_features } => (in_features * out_features) as u64,
            LayerSpec::BatchNorm { channels, .. } => 4 * channels as u64,
            _ => 0,
        };
        dims = spec.output_dims(&dims)?;
        activations += dims.iter().product::<usize>() as u64;
    }
    Ok(2 * weights + 2 * activations * batch_size as u64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub convention: String,
    pub epochs: usize,
    pub samples_per_epoch: u64,
    /// Adjusted MACs with every pass at 32/32 bits.
    pub full_precision_macs: f64,
    /// Adjusted MACs under the precision regime.
    pub regime_macs: f64,
    /// Cumulative regime MACs after each epoch.
    pub cumulative_macs: Vec<f64>,
    pub reduction_percent: f64,
    pub memory_ratio: f64,
}

/// Aggregates training cost over a run with per-epoch backward precisions `epoch_bits`.
pub fn run_report(
    epoch_bits: &[u32],
    specs: &[LayerSpec],
    input_dims: &[usize],
    samples_per_epoch: u64,
    batch_size: usize,
    accounting: Accounting,
) -> Result<CostReport> {
    let fp_epoch = training_macs(&model_ledger(specs, input_dims, 32, Accounting::Uniform)?) * samples_per_epoch as f64;
    let elements = step_elements(specs, input_dims, batch_size)?;
    let mut cumulative_macs = Vec::with_capacity(epoch_bits.len());
    let mut total = 0.0;
    let mut peak = 0.0f64;
    for &bits in epoch_bits {
        total += training_macs(&model_ledger(specs, input_dims, bits, accounting)?) * samples_per_epoch as f64;
        cumulative_macs.push(total);
        peak = peak.max(memory_usage(&MemoryLedger::uniform(elements, accounting.memory_bits(bits)))?);
    }
    let full = fp_epoch * epoch_bits.len() as f64;
    let reduction_percent = if full > 0.0 { 100.0 * (1.0 - total / full) } else { 0.0 };
    Ok(CostReport {
        convention: accounting.describe(),
        epochs: epoch_bits.len(),
        samples_per_epoch,
        full_precision_macs: full,
        regime_macs: total,
        cumulative_macs,
        reduction_percent,
        memory_ratio: peak,
    })
}
