//! Layers, reverse-mode gradients and network composition.
//!
//! Binary layers binarize both operands with [`sign`](crate::quant::sign)
//! in the forward pass and use a straight-through estimator in the
//! backward pass: the loss gradient arriving at a binary layer is first
//! fake-quantized to 8 bits, the weight gradient passes straight through
//! the binarizer, and the activation gradient is shaped by the piecewise
//! polynomial surrogate evaluated at activations quantized to the current
//! epoch's backward precision.

mod binary;
pub mod checkpoint;
mod layers;
mod network;
pub mod packed;

pub use binary::{
    binarize_weights, binary_conv_backward, binary_conv_forward, binary_linear_backward,
    binary_linear_forward, quantize_gradient, surrogate_grad, BinaryConvCache, BinaryLinearCache,
};
pub use layers::{
    batchnorm_backward, batchnorm_eval, batchnorm_forward, flatten, hardtanh_backward, hardtanh_forward,
    linear_backward, linear_forward, maxpool_backward, maxpool_forward, softmax_cross_entropy,
    BatchNormCache, BatchNormState, MaxPoolCache,
};
pub use network::{convnet_small, Layer, LayerSpec, Network};

use crate::error::{Error, Result};
use crate::quant::QuantSpec;
use crate::tensor::Tensor;

/// A trainable tensor: latent full-precision values plus accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub real: Tensor,
    pub grad: Tensor,
}

impl Parameter {
    pub fn new(name: impl Into<String>, real: Tensor) -> Self {
        let grad = Tensor::zeros(real.dims()).expect("shape already validated");
        Parameter { name: name.into(), real, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().fill(0.0);
    }

    /// Adds `g` into the accumulated gradient.
    pub fn accumulate(&mut self, g: &Tensor) -> Result<()> {
        if g.dims() != self.grad.dims() {
            return Err(Error::IncompatibleShapes(format!(
                "gradient {:?} for parameter {} of shape {:?}",
                g.dims(),
                self.name,
                self.grad.dims()
            )));
        }
        for (a, &b) in self.grad.data_mut().iter_mut().zip(g.data()) {
            *a += b;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradQuantMode {
    /// One symmetric range `[−max|g|, max|g|]` for the whole tensor.
    #[default]
    PerTensorSymmetric,
}

/// Backward-pass precision for one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrecisionContext {
    backward_bits: u32,
    grad_bits: Option<u32>,
    act_clip: Option<QuantSpec>,
    grad_quant_mode: GradQuantMode,
}

pub const DEFAULT_GRAD_BITS: u32 = 8;

impl PrecisionContext {
    /// Activations quantized to `backward_bits` on `[-1, 1]`, loss gradients to 8 bits.
    pub fn new(backward_bits: u32) -> Result<Self> {
        if !(1..=8).contains(&backward_bits) {
            return Err(Error::InvalidConfig(format!("backward bits {backward_bits} not in [1, 8]")));
        }
        Ok(PrecisionContext {
            backward_bits,
            grad_bits: Some(DEFAULT_GRAD_BITS),
            act_clip: Some(QuantSpec::symmetric_unit(backward_bits)?),
            grad_quant_mode: GradQuantMode::PerTensorSymmetric,
        })
    }

    /// Overrides the loss-gradient width; `None` leaves gradients unquantized.
    pub fn with_grad_bits(mut self, grad_bits: Option<u32>) -> Result<Self> {
        if let Some(bits) = grad_bits {
            QuantSpec::symmetric_unit(bits)?;
        }
        self.grad_bits = grad_bits;
        Ok(self)
    }

    /// Plain straight-through estimator: no activation or gradient quantization.
    pub fn plain_ste() -> Self {
        PrecisionContext {
            backward_bits: 8,
            grad_bits: None,
            act_clip: None,
            grad_quant_mode: GradQuantMode::PerTensorSymmetric,
        }
    }

    pub fn backward_bits(&self) -> u32 {
        self.backward_bits
    }

    pub fn grad_bits(&self) -> Option<u32> {
        self.grad_bits
    }

    pub fn act_clip(&self) -> Option<&QuantSpec> {
        self.act_clip.as_ref()
    }

    pub fn grad_quant_mode(&self) -> GradQuantMode {
        self.grad_quant_mode
    }
}
