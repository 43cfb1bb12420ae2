use super::{GradQuantMode, Parameter, PrecisionContext};
use crate::error::{Error, Result};
use crate::quant::{quantize_tensor, sign_tensor, standardize, QuantSpec};
use crate::tensor::{conv2d_grad_input, conv2d_grad_weight, conv2d_ref, matmul, transpose, Tensor};

/// Standardized latent weights and their signs.
pub fn binarize_weights(p: &Parameter) -> Result<(Tensor, Tensor)> {
    let w_std = standardize(&p.real)?;
    let w_bin = sign_tensor(&w_std);
    Ok((w_std, w_bin))
}

/// Piecewise polynomial derivative: `2+2a` on `[−1,0)`, `2−2a` on `[0,1)`, else `0`.
#[inline]
pub fn surrogate_grad(a: f32) -> f32 {
    if (-1.0..0.0).contains(&a) {
        2.0 + 2.0 * a
    } else if (0.0..1.0).contains(&a) {
        2.0 - 2.0 * a
    } else {
        0.0
    }
}

/// Fake-quantizes a gradient tensor to `bits` over `[−max|g|, max|g|]`.
/// An all-zero tensor stays zero.
pub fn quantize_gradient(g: &Tensor, bits: u32, mode: GradQuantMode) -> Result<Tensor> {
    match mode {
        GradQuantMode::PerTensorSymmetric => {
            let gmax = g.data().iter().fold(0.0f32, |m, v| m.max(v.abs())) as f64;
            if gmax == 0.0 {
                return Ok(g.clone());
            }
            Ok(quantize_tensor(g, &QuantSpec::new(bits, -gmax, gmax)?))
        }
    }
}

fn loss_gradient(upstream: &Tensor, ctx: &PrecisionContext) -> Result<Tensor> {
    match ctx.grad_bits() {
        Some(bits) => quantize_gradient(upstream, bits, ctx.grad_quant_mode()),
        None => Ok(upstream.clone()),
    }
}

fn activation_at_precision(a: &Tensor, ctx: &PrecisionContext) -> Tensor {
    match ctx.act_clip() {
        Some(spec) => quantize_tensor(a, spec),
        None => a.clone(),
    }
}

/// Scales `grad_a1` by the surrogate derivative at the cached quantized activations.
fn apply_surrogate(grad_a1: Tensor, a_ps: &Tensor) -> Result<Tensor> {
    grad_a1.zip_map(a_ps, |g, a| g * surrogate_grad(a))
}

/// Values a binary convolution keeps for its backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryConvCache {
    pub w_bin: Tensor,
    pub a_bin: Tensor,
    pub a_ps: Tensor,
    pub stride: usize,
    pub padding: usize,
}

/// `conv2d_ref(sign(a), sign(standardize(w)))`, the float emulation of the
/// XNOR/popcount convolution.
pub fn binary_conv_forward(
    a_32: &Tensor,
    p: &Parameter,
    ctx: &PrecisionContext,
    stride: usize,
    padding: usize,
) -> Result<(Tensor, BinaryConvCache)> {
    let (_, w_bin) = binarize_weights(p)?;
    let a_bin = sign_tensor(a_32);
    let out = conv2d_ref(&a_bin, &w_bin, stride, padding)?;
    let a_ps = activation_at_precision(a_32, ctx);
    Ok((out, BinaryConvCache { w_bin, a_bin, a_ps, stride, padding }))
}

/// Returns `(grad_input, grad_weight)`.
///
/// The weight gradient is the convolution weight-gradient of the quantized
/// upstream against the cached binary activations; it is applied to the
/// latent weights unchanged. The input gradient is the convolution
/// input-gradient against the binary weights, times the surrogate
/// derivative at the cached quantized activations.
pub fn binary_conv_backward(
    upstream: &Tensor,
    cache: Option<&BinaryConvCache>,
    ctx: &PrecisionContext,
) -> Result<(Tensor, Tensor)> {
    let cache = cache.ok_or(Error::StaleCache("binary_conv"))?;
    let g = loss_gradient(upstream, ctx)?;
    let grad_weight = conv2d_grad_weight(&g, &cache.a_bin, cache.w_bin.dims(), cache.stride, cache.padding)?;
    let grad_a1 = conv2d_grad_input(&g, &cache.w_bin, cache.a_bin.dims(), cache.stride, cache.padding)?;
    Ok((apply_surrogate(grad_a1, &cache.a_ps)?, grad_weight))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinaryLinearCache {
    pub w_bin: Tensor,
    pub a_bin: Tensor,
    pub a_ps: Tensor,
}

/// `sign(a)·sign(standardize(w))ᵀ` for `a: [b, in]`, `w: [out, in]`.
pub fn binary_linear_forward(
    a_32: &Tensor,
    p: &Parameter,
    ctx: &PrecisionContext,
) -> Result<(Tensor, BinaryLinearCache)> {
    let (_, w_bin) = binarize_weights(p)?;
    let a_bin = sign_tensor(a_32);
    let out = matmul(&a_bin, &transpose(&w_bin)?)?;
    let a_ps = activation_at_precision(a_32, ctx);
    Ok((out, BinaryLinearCache { w_bin, a_bin, a_ps }))
}

pub fn binary_linear_backward(
    upstream: &Tensor,
    cache: Option<&BinaryLinearCache>,
    ctx: &PrecisionContext,
) -> Result<(Tensor, Tensor)> {
    let cache = cache.ok_or(Error::StaleCache("binary_linear"))?;
    let g = loss_gradient(upstream, ctx)?;
    let grad_weight = matmul(&transpose(&g)?, &cache.a_bin)?;
    let grad_a1 = matmul(&g, &cache.w_bin)?;
    Ok((apply_surrogate(grad_a1, &cache.a_ps)?, grad_weight))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(dims: &[usize], data: &[f32]) -> Parameter {
        Parameter::new("w", Tensor::new(dims, data.to_vec()).unwrap())
    }

    #[test]
    fn binarize_examples() {
        let (w_std, w_bin) = binarize_weights(&param(&[2], &[2.0, -2.0])).unwrap();
        assert_eq!(w_std.data(), &[1.0, -1.0]);
        assert_eq!(w_bin.data(), &[1.0, -1.0]);
        let (_, w_bin) = binarize_weights(&param(&[4], &[0.1, -0.3, 0.1, -0.3])).unwrap();
        assert_eq!(w_bin.data(), &[1.0, -1.0, 1.0, -1.0]);
        let err = binarize_weights(&param(&[3], &[5.0, 5.0, 5.0])).unwrap_err();
        assert_eq!(err.code(), "zero-variance-weights");
    }

    #[test]
    fn surrogate_examples() {
        assert_eq!(surrogate_grad(0.5), 1.0);
        assert_eq!(surrogate_grad(-0.5), 1.0);
        assert_eq!(surrogate_grad(2.0), 0.0);
        assert_eq!(surrogate_grad(-1.0), 0.0);
        assert_eq!(surrogate_grad(1.0), 0.0);
        assert_eq!(surrogate_grad(0.0), 2.0);
        assert_eq!(surrogate_grad(-f32::MIN_POSITIVE), 2.0);
    }

    #[test]
    fn sign_conv_by_hand() {
        let a = Tensor::new(&[1, 1, 2], vec![0.7, -0.2]).unwrap();
        let p = param(&[1, 1, 1, 2], &[-0.4, 0.4]);
        let ctx = PrecisionContext::new(4).unwrap();
        let (out, cache) = binary_conv_forward(&a, &p, &ctx, 1, 0).unwrap();
        assert_eq!(out.data(), &[-2.0]);
        assert_eq!(cache.a_bin.data(), &[1.0, -1.0]);
        assert_eq!(cache.w_bin.data(), &[-1.0, 1.0]);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let a = Tensor::new(&[1, 2, 2], vec![0.3, -0.1, 0.8, -0.9]).unwrap();
        let p = param(&[1, 1, 2, 2], &[0.5, -0.5, 0.2, 0.1]);
        let ctx = PrecisionContext::new(3).unwrap();
        let (out, cache) = binary_conv_forward(&a, &p, &ctx, 1, 1).unwrap();
        let up = Tensor::zeros(out.dims()).unwrap();
        let (gi, gw) = binary_conv_backward(&up, Some(&cache), &ctx).unwrap();
        assert!(gi.data().iter().chain(gw.data()).all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_chain_rule() {
        // 1x1 conv with two output channels over one input element.
        let ctx = PrecisionContext::new(8).unwrap();
        let a = Tensor::new(&[1, 1, 1], vec![0.4]).unwrap();
        // Two-element weight so that σ > 0; only the first tap is exercised.
        let p = param(&[2, 1, 1, 1], &[-0.3, 0.9]);
        let (_, cache) = binary_conv_forward(&a, &p, &ctx, 1, 0).unwrap();
        let a_ps = cache.a_ps.data()[0];
        assert!((a_ps - 0.4).abs() < 1.0 / 255.0);
        let g = 0.37f32;
        let up = Tensor::new(&[2, 1, 1], vec![g, 0.0]).unwrap();
        let q8 = quantize_gradient(&up, 8, GradQuantMode::PerTensorSymmetric).unwrap();
        let (gi, gw) = binary_conv_backward(&up, Some(&cache), &ctx).unwrap();
        assert_eq!(gw.data()[0], q8.data()[0] * 1.0);
        let expected = (q8.data()[0] * -1.0 + q8.data()[1] * 1.0) * (2.0 - 2.0 * a_ps);
        assert_eq!(gi.data()[0], expected);
    }

    fn scalar_cache(a_ps: f32, w: f32) -> BinaryConvCache {
        BinaryConvCache {
            w_bin: Tensor::new(&[1, 1, 1, 1], vec![w]).unwrap(),
            a_bin: Tensor::new(&[1, 1, 1], vec![1.0]).unwrap(),
            a_ps: Tensor::new(&[1, 1, 1], vec![a_ps]).unwrap(),
            stride: 1,
            padding: 0,
        }
    }

    #[test]
    fn scalar_cache_by_hand() {
        let ctx = PrecisionContext::new(4).unwrap();
        let g = 0.8f32;
        let up = Tensor::new(&[1, 1, 1], vec![g]).unwrap();
        // A lone value is its own range end, so q8(g) == g.
        let q8 = quantize_gradient(&up, 8, GradQuantMode::PerTensorSymmetric).unwrap().data()[0];
        assert_eq!(q8, g);
        for w in [1.0f32, -1.0] {
            let (gi, gw) = binary_conv_backward(&up, Some(&scalar_cache(0.4, w)), &ctx).unwrap();
            assert_eq!(gw.data(), &[q8]);
            assert_eq!(gi.data(), &[q8 * w * (2.0 - 2.0 * 0.4f32)]);
            assert!((gi.data()[0] - w * g * 1.2).abs() < 1e-6);
        }
    }

    #[test]
    fn outside_support_blocks_input_gradient() {
        let ctx = PrecisionContext::new(4).unwrap();
        let up = Tensor::new(&[1, 1, 1], vec![0.9]).unwrap();
        let (gi, gw) = binary_conv_backward(&up, Some(&scalar_cache(1.5, 1.0)), &ctx).unwrap();
        assert_eq!(gi.data(), &[0.0]);
        assert_eq!(gw.data(), &[0.9]);
    }

    #[test]
    fn missing_cache_is_stale() {
        let ctx = PrecisionContext::new(4).unwrap();
        let up = Tensor::zeros(&[1, 1, 1]).unwrap();
        assert_eq!(binary_conv_backward(&up, None, &ctx).unwrap_err().code(), "stale-cache");
        assert_eq!(binary_linear_backward(&up, None, &ctx).unwrap_err().code(), "stale-cache");
    }

    #[test]
    fn gradient_quantization() {
        let g = Tensor::new(&[3], vec![-0.5, 0.25, 1.0]).unwrap();
        let q = quantize_gradient(&g, 8, GradQuantMode::PerTensorSymmetric).unwrap();
        assert_eq!(q.data()[2], 1.0);
        assert!((q.data()[1] - 0.25).abs() <= 1.0 / 255.0);
        let z = Tensor::zeros(&[4]).unwrap();
        assert_eq!(quantize_gradient(&z, 8, GradQuantMode::PerTensorSymmetric).unwrap(), z);
    }

    #[test]
    fn binary_linear_shapes() {
        let ctx = PrecisionContext::new(2).unwrap();
        let a = Tensor::new(&[2, 3], vec![0.1, -0.2, 0.3, -0.4, 0.5, -0.6]).unwrap();
        let p = param(&[2, 3], &[1.0, -1.0, 0.5, -0.5, 0.2, 0.3]);
        let (out, cache) = binary_linear_forward(&a, &p, &ctx).unwrap();
        assert_eq!(out.dims(), &[2, 2]);
        // sample 0: signs [+,-,+], row 0 signs [+,-,+] → 3
        assert_eq!(out.data()[0], 3.0);
        let (gi, gw) = binary_linear_backward(&Tensor::full(&[2, 2], 0.5).unwrap(), Some(&cache), &ctx).unwrap();
        assert_eq!(gi.dims(), &[2, 3]);
        assert_eq!(gw.dims(), &[2, 3]);
    }
}
