use super::Parameter;
use crate::error::{Error, Result};
use crate::tensor::{matmul, transpose, Shape, Tensor};

pub fn hardtanh_forward(a: &Tensor) -> Tensor {
    a.map(|v| v.clamp(-1.0, 1.0))
}

/// Passes `upstream` where the forward input was strictly inside `(−1, 1)`.
pub fn hardtanh_backward(upstream: &Tensor, input: &Tensor) -> Result<Tensor> {
    upstream.zip_map(input, |g, x| if x > -1.0 && x < 1.0 { g } else { 0.0 })
}

/// `x·wᵀ + b` for `x: [b, in]`, `w: [out, in]`, `b: [out]`.
pub fn linear_forward(x: &Tensor, w: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let mut out = matmul(x, &transpose(w)?)?;
    if let Some(bias) = bias {
        let cols = out.dims()[1];
        if bias.len() != cols {
            return Err(Error::IncompatibleShapes(format!("bias of {} for {cols} outputs", bias.len())));
        }
        for row in out.data_mut().chunks_exact_mut(cols) {
            for (o, &b) in row.iter_mut().zip(bias.data()) {
                *o += b;
            }
        }
    }
    Ok(out)
}

/// Returns `(grad_x, grad_w, grad_b)`.
pub fn linear_backward(upstream: &Tensor, x: &Tensor, w: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let grad_x = matmul(upstream, w)?;
    let grad_w = matmul(&transpose(upstream)?, x)?;
    let cols = upstream.dims()[1];
    let mut grad_b = vec![0.0f32; cols];
    for row in upstream.data().chunks_exact(cols) {
        for (b, &g) in grad_b.iter_mut().zip(row) {
            *b += g;
        }
    }
    Ok((grad_x, grad_w, Tensor::new(&[cols], grad_b)?))
}

/// Per-channel affine parameters and running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState {
    pub gamma: Parameter,
    pub beta: Parameter,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub eps: f32,
    pub momentum: f32,
}

impl BatchNormState {
    pub fn new(prefix: &str, channels: usize, eps: f32, momentum: f32) -> Result<Self> {
        Ok(BatchNormState {
            gamma: Parameter::new(format!("{prefix}.gamma"), Tensor::full(&[channels], 1.0)?),
            beta: Parameter::new(format!("{prefix}.beta"), Tensor::zeros(&[channels])?),
            running_mean: Tensor::zeros(&[channels])?,
            running_var: Tensor::full(&[channels], 1.0)?,
            eps,
            momentum,
        })
    }

    pub fn channels(&self) -> usize {
        self.gamma.real.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormCache {
    pub x_hat: Tensor,
    pub inv_std: Vec<f64>,
}

/// `(batch, channels, spatial)` view of an `[n, c, ...]` tensor.
fn channel_layout(dims: &[usize], channels: usize) -> Result<(usize, usize)> {
    if dims.len() < 2 || dims[1] != channels {
        return Err(Error::IncompatibleShapes(format!(
            "batch norm over {channels} channels got input {dims:?}"
        )));
    }
    Ok((dims[0], dims[2..].iter().product()))
}

/// Evaluation-mode normalization with the running statistics.
pub fn batchnorm_eval(a: &Tensor, state: &BatchNormState) -> Result<Tensor> {
    let channels = state.channels();
    let (batch, spatial) = channel_layout(a.dims(), channels)?;
    let x = a.data();
    let gamma = state.gamma.real.data();
    let beta = state.beta.real.data();
    let mut out = vec![0.0f32; x.len()];
    for c in 0..channels {
        let inv = 1.0 / (state.running_var.data()[c] + state.eps).sqrt();
        let mean = state.running_mean.data()[c];
        for n in 0..batch {
            let base = (n * channels + c) * spatial;
            for i in base..base + spatial {
                out[i] = gamma[c] * ((x[i] - mean) * inv) + beta[c];
            }
        }
    }
    Ok(Tensor::from_parts(a.shape().clone(), out))
}

/// Per-channel normalization. In training mode batch statistics are used
/// (biased variance) and the running statistics are updated with the
/// unbiased variance; in evaluation mode the running statistics are used.
pub fn batchnorm_forward(
    a: &Tensor,
    state: &mut BatchNormState,
    training: bool,
) -> Result<(Tensor, Option<BatchNormCache>)> {
    if !training {
        return Ok((batchnorm_eval(a, state)?, None));
    }
    let channels = state.channels();
    let (batch, spatial) = channel_layout(a.dims(), channels)?;
    let x = a.data();
    let gamma = state.gamma.real.data();
    let beta = state.beta.real.data();
    let mut out = vec![0.0f32; x.len()];

    let count = batch * spatial;
    if state.eps == 0.0 && count <= 1 {
        return Err(Error::DegenerateBatch);
    }
    let mut x_hat = vec![0.0f32; x.len()];
    let mut inv_std = vec![0.0f64; channels];
    for c in 0..channels {
        let mut sum = 0.0f64;
        for n in 0..batch {
            let base = (n * channels + c) * spatial;
            sum += x[base..base + spatial].iter().map(|&v| v as f64).sum::<f64>();
        }
        let mean = sum / count as f64;
        let mut sq = 0.0f64;
        for n in 0..batch {
            let base = (n * channels + c) * spatial;
            sq += x[base..base + spatial].iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>();
        }
        let var = sq / count as f64;
        if var + state.eps as f64 == 0.0 {
            return Err(Error::DegenerateBatch);
        }
        let inv = 1.0 / (var + state.eps as f64).sqrt();
        inv_std[c] = inv;
        for n in 0..batch {
            let base = (n * channels + c) * spatial;
            for i in base..base + spatial {
                let xh = ((x[i] as f64 - mean) * inv) as f32;
                x_hat[i] = xh;
                out[i] = gamma[c] * xh + beta[c];
            }
        }
        let unbiased = if count > 1 { sq / (count - 1) as f64 } else { var };
        let m = state.momentum;
        let rm = &mut state.running_mean.data_mut()[c];
        *rm = (1.0 - m) * *rm + m * mean as f32;
        let rv = &mut state.running_var.data_mut()[c];
        *rv = (1.0 - m) * *rv + m * unbiased as f32;
    }
    let shape = a.shape().clone();
    Ok((
        Tensor::from_parts(shape.clone(), out),
        Some(BatchNormCache { x_hat: Tensor::from_parts(shape, x_hat), inv_std }),
    ))
}

/// Returns `(grad_input, grad_gamma, grad_beta)` for a training-mode forward.
pub fn batchnorm_backward(
    upstream: &Tensor,
    cache: Option<&BatchNormCache>,
    gamma: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let cache = cache.ok_or(Error::StaleCache("batchnorm"))?;
    let channels = gamma.len();
    let (batch, spatial) = channel_layout(upstream.dims(), channels)?;
    if upstream.dims() != cache.x_hat.dims() {
        return Err(Error::IncompatibleShapes("upstream does not match cached input".into()));
    }
    let g = upstream.data();
    let xh = cache.x_hat.data();
    let m = (batch * spatial) as f64;
    let mut grad_in = vec![0.0f32; g.len()];
    let mut grad_gamma = vec![0.0f32; channels];
    let mut grad_beta = vec![0.0f32; channels];
    for c in 0..channels {
        let (mut sum_g, mut sum_gx) = (0.0f64, 0.0f64);
        for n in 0..batch {
            let base = (n * channels + c) * spatial;
            for i in base..base + spatial {
                sum_g += g[i] as f64;
                sum_gx += g[i] as f64 * xh[i] as f64;
            }
        }
        grad_beta[c] = sum_g as f32;
        grad_gamma[c] = sum_gx as f32;
        let scale = gamma.data()[c] as f64 * cache.inv_std[c] / m;
        for n in 0..batch {
            let base = (n * channels + c) * spatial;
            for i in base..base + spatial {
                grad_in[i] = (scale * (m * g[i] as f64 - sum_g - xh[i] as f64 * sum_gx)) as f32;
            }
        }
    }
    Ok((
        Tensor::from_parts(upstream.shape().clone(), grad_in),
        Tensor::new(&[channels], grad_gamma)?,
        Tensor::new(&[channels], grad_beta)?,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaxPoolCache {
    pub argmax: Vec<usize>,
    pub input_dims: Vec<usize>,
}

/// Non-overlapping `size×size` max pooling over `[n, c, h, w]`; ties keep the first maximum.
pub fn maxpool_forward(x: &Tensor, size: usize) -> Result<(Tensor, MaxPoolCache)> {
    let &[n, c, h, w] = x.dims() else {
        return Err(Error::IncompatibleShapes(format!("maxpool needs [n,c,h,w], got {:?}", x.dims())));
    };
    if size == 0 || size > h || size > w {
        return Err(Error::KernelTooLarge(format!("pool {size} over {h}x{w}")));
    }
    let (oh, ow) = (h / size, w / size);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    let data = x.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for y in 0..oh {
            for xo in 0..ow {
                let mut best = base + y * size * w + xo * size;
                for u in 0..size {
                    for v in 0..size {
                        let i = base + (y * size + u) * w + xo * size + v;
                        if data[i] > data[best] {
                            best = i;
                        }
                    }
                }
                out.push(data[best]);
                argmax.push(best);
            }
        }
    }
    Ok((
        Tensor::from_parts(Shape::new(&[n, c, oh, ow])?, out),
        MaxPoolCache { argmax, input_dims: x.dims().to_vec() },
    ))
}

pub fn maxpool_backward(upstream: &Tensor, cache: Option<&MaxPoolCache>) -> Result<Tensor> {
    let cache = cache.ok_or(Error::StaleCache("maxpool"))?;
    if upstream.len() != cache.argmax.len() {
        return Err(Error::IncompatibleShapes("upstream does not match pooled output".into()));
    }
    let mut grad = Tensor::zeros(&cache.input_dims)?;
    let dst = grad.data_mut();
    for (&i, &g) in cache.argmax.iter().zip(upstream.data()) {
        dst[i] += g;
    }
    Ok(grad)
}

/// `[n, ...] → [n, prod(...)]`.
pub fn flatten(x: &Tensor) -> Result<Tensor> {
    let n = x.dims()[0];
    let rest = x.len() / n;
    x.clone().reshape(&[n, rest])
}

/// Mean cross-entropy over the batch and its gradient `(softmax − onehot)/b`.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let &[b, k] = logits.dims() else {
        return Err(Error::IncompatibleShapes(format!("logits must be [b,K], got {:?}", logits.dims())));
    };
    if labels.len() != b {
        return Err(Error::IncompatibleShapes(format!("{} labels for batch of {b}", labels.len())));
    }
    let mut loss = 0.0f64;
    let mut grad = vec![0.0f32; b * k];
    for (row, (&label, g)) in labels.iter().zip(grad.chunks_exact_mut(k)).enumerate() {
        if label >= k {
            return Err(Error::BadLabel { label, classes: k });
        }
        let z = &logits.data()[row * k..(row + 1) * k];
        let max = z.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64;
        let sum: f64 = z.iter().map(|&v| (v as f64 - max).exp()).sum();
        let log_sum = max + sum.ln();
        loss += log_sum - z[label] as f64;
        for (j, gj) in g.iter_mut().enumerate() {
            let p = (z[j] as f64 - log_sum).exp();
            let onehot = if j == label { 1.0 } else { 0.0 };
            *gj = ((p - onehot) / b as f64) as f32;
        }
    }
    Ok((loss / b as f64, Tensor::from_parts(logits.shape().clone(), grad)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hardtanh_examples() {
        let x = Tensor::new(&[3], vec![-2.0, 0.5, 3.0]).unwrap();
        assert_eq!(hardtanh_forward(&x).data(), &[-1.0, 0.5, 1.0]);
        let up = Tensor::full(&[3], 1.0).unwrap();
        assert_eq!(hardtanh_backward(&up, &x).unwrap().data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn hardtanh_matches_central_difference() {
        let h = 1e-3f32;
        let f = |v: f32| hardtanh_forward(&Tensor::new(&[1], vec![v]).unwrap()).data()[0];
        let fd = (f(0.3 + h) - f(0.3 - h)) / (2.0 * h);
        let analytic = hardtanh_backward(&Tensor::full(&[1], 1.0).unwrap(), &Tensor::full(&[1], 0.3).unwrap())
            .unwrap()
            .data()[0];
        assert!((fd - analytic).abs() < 1e-4);
    }

    #[test]
    fn batchnorm_identity_regime() {
        // Per channel: mean 0, population variance 1.
        let x = Tensor::new(&[4, 1], vec![1.0, -1.0, 1.0, -1.0]).unwrap();
        let mut state = BatchNormState::new("bn", 1, 0.0, 0.1).unwrap();
        let (y, _) = batchnorm_forward(&x, &mut state, true).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn batchnorm_shift() {
        let x = Tensor::zeros(&[2, 3, 2, 2]).unwrap();
        let mut state = BatchNormState::new("bn", 3, 1e-5, 0.1).unwrap();
        state.beta.real = Tensor::full(&[3], 5.0).unwrap();
        state.gamma.real = Tensor::new(&[3], vec![0.3, -2.0, 7.0]).unwrap();
        let (y, _) = batchnorm_forward(&x, &mut state, true).unwrap();
        assert!(y.data().iter().all(|&v| v == 5.0));
        let (y, _) = batchnorm_forward(&x, &mut state, false).unwrap();
        assert!(y.data().iter().all(|&v| (v - 5.0).abs() < 1e-5));
    }

    #[test]
    fn batchnorm_degenerate_batch() {
        let x = Tensor::new(&[1, 2], vec![0.5, 0.7]).unwrap();
        let mut state = BatchNormState::new("bn", 2, 0.0, 0.1).unwrap();
        assert_eq!(batchnorm_forward(&x, &mut state, true).unwrap_err().code(), "degenerate-batch");
        // Evaluation mode uses running statistics and is fine.
        assert!(batchnorm_forward(&x, &mut state, false).is_ok());
        let mut state = BatchNormState::new("bn", 2, 1e-5, 0.1).unwrap();
        assert!(batchnorm_forward(&x, &mut state, true).is_ok());
    }

    #[test]
    fn batchnorm_updates_running_stats() {
        let x = Tensor::new(&[2, 1], vec![1.0, 3.0]).unwrap();
        let mut state = BatchNormState::new("bn", 1, 1e-5, 0.5).unwrap();
        batchnorm_forward(&x, &mut state, true).unwrap();
        assert_eq!(state.running_mean.data(), &[1.0]);
        // unbiased variance of [1, 3] is 2
        assert_eq!(state.running_var.data(), &[1.5]);
    }

    #[test]
    fn softmax_examples() {
        let (loss, _) = softmax_cross_entropy(&Tensor::zeros(&[1, 10]).unwrap(), &[3]).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-9);
        let mut prev = f64::INFINITY;
        for margin in [1.0f32, 5.0, 10.0, 30.0] {
            let logits = Tensor::new(&[1, 3], vec![margin, 0.0, 0.0]).unwrap();
            let (loss, _) = softmax_cross_entropy(&logits, &[0]).unwrap();
            assert!(loss < prev);
            prev = loss;
        }
        assert!(prev < 1e-9);
        let err = softmax_cross_entropy(&Tensor::zeros(&[1, 3]).unwrap(), &[3]).unwrap_err();
        assert_eq!(err.code(), "bad-label");
    }

    #[test]
    fn maxpool_routes_to_argmax() {
        let x = Tensor::new(&[1, 1, 2, 4], vec![1., 5., 2., 2., 3., 0., 2., 2.]).unwrap();
        let (y, cache) = maxpool_forward(&x, 2).unwrap();
        assert_eq!(y.data(), &[5.0, 2.0]);
        let g = maxpool_backward(&Tensor::new(&[1, 1, 1, 2], vec![1.0, 2.0]).unwrap(), Some(&cache)).unwrap();
        assert_eq!(g.data(), &[0., 1., 2., 0., 0., 0., 0., 0.]);
        assert_eq!(maxpool_backward(&y, None).unwrap_err().code(), "stale-cache");
    }

    #[test]
    fn flatten_keeps_batch() {
        let x = Tensor::zeros(&[2, 3, 2, 2]).unwrap();
        assert_eq!(flatten(&x).unwrap().dims(), &[2, 12]);
    }

    #[test]
    fn linear_identity() {
        let x = Tensor::new(&[2, 2], vec![0.3, -0.7, 1.5, 2.0]).unwrap();
        let id = Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(linear_forward(&x, &id, None).unwrap(), x);
        let b = Tensor::new(&[2], vec![1.0, -1.0]).unwrap();
        assert_eq!(linear_forward(&x, &id, Some(&b)).unwrap().data(), &[1.3, -1.7, 2.5, 1.0]);
    }
}
