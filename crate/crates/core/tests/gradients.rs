//! Backward passes against central finite differences and direct loops.

use cyclebnn::nn::{
    batchnorm_backward, batchnorm_forward, binary_conv_backward, binary_conv_forward, binary_linear_backward,
    binary_linear_forward, hardtanh_backward, hardtanh_forward, linear_backward, linear_forward,
    quantize_gradient, softmax_cross_entropy, surrogate_grad, BatchNormState, GradQuantMode, Parameter,
    PrecisionContext,
};
use cyclebnn::quant::{quantize_tensor, sign_tensor, QuantSpec};
use cyclebnn::rng::Prng;
use cyclebnn::tensor::{conv2d_grad_input, conv2d_grad_weight, conv2d_ref};
use cyclebnn::Tensor;

const FD_STEP: f64 = 1e-2;
const FD_TOL: f64 = 1e-3;

fn random(dims: &[usize], lo: f64, hi: f64, rng: &mut Prng) -> Tensor {
    let n = dims.iter().product();
    Tensor::new(dims, (0..n).map(|_| rng.uniform_in(lo, hi) as f32).collect()).unwrap()
}

/// Fourth-order central difference of `f` with respect to every element of `x`.
fn numeric_grad(x: &Tensor, f: impl Fn(&Tensor) -> f64) -> Vec<f64> {
    let mut probe = x.clone();
    (0..x.len())
        .map(|i| {
            let base = x.data()[i] as f64;
            let mut at = |d: f64| {
                probe.data_mut()[i] = (base + d) as f32;
                let v = f(&probe);
                probe.data_mut()[i] = base as f32;
                v
            };
            let h = FD_STEP;
            (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h)
        })
        .collect()
}

fn relative_error(analytic: &Tensor, numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.data().iter().zip(numeric).map(|(&a, &n)| (a as f64 - n).powi(2)).sum();
    let norm: f64 = numeric.iter().map(|n| n * n).sum();
    (diff / norm.max(1e-30)).sqrt()
}

/// `Σ upstream · out`, accumulated in f64.
fn weighted_sum(out: &Tensor, upstream: &Tensor) -> f64 {
    out.data().iter().zip(upstream.data()).map(|(&o, &u)| o as f64 * u as f64).sum()
}

fn assert_close(what: &str, analytic: &Tensor, numeric: &[f64]) {
    let err = relative_error(analytic, numeric);
    assert!(err <= FD_TOL, "{what}: relative error {err:e}");
}

#[test]
fn linear_matches_finite_differences() {
    let mut rng = Prng::new(11);
    let x = random(&[4, 5], -1.0, 1.0, &mut rng);
    let w = random(&[3, 5], -1.0, 1.0, &mut rng);
    let b = random(&[3], -1.0, 1.0, &mut rng);
    let up = random(&[4, 3], -1.0, 1.0, &mut rng);
    let (gx, gw, gb) = linear_backward(&up, &x, &w).unwrap();
    let loss = |x: &Tensor, w: &Tensor, b: &Tensor| weighted_sum(&linear_forward(x, w, Some(b)).unwrap(), &up);
    assert_close("linear input", &gx, &numeric_grad(&x, |x| loss(x, &w, &b)));
    assert_close("linear weight", &gw, &numeric_grad(&w, |w| loss(&x, w, &b)));
    assert_close("linear bias", &gb, &numeric_grad(&b, |b| loss(&x, &w, b)));
}

#[test]
fn batchnorm_matches_finite_differences() {
    let mut rng = Prng::new(12);
    let x = random(&[3, 2, 2, 2], -2.0, 2.0, &mut rng);
    let up = random(&[3, 2, 2, 2], -1.0, 1.0, &mut rng);
    let mut state = BatchNormState::new("bn", 2, 1e-5, 0.1).unwrap();
    state.gamma.real = Tensor::new(&[2], vec![1.3, -0.7]).unwrap();
    state.beta.real = Tensor::new(&[2], vec![0.2, 0.4]).unwrap();
    let (_, cache) = batchnorm_forward(&x, &mut state.clone(), true).unwrap();
    let (gx, gg, gb) = batchnorm_backward(&up, cache.as_ref(), &state.gamma.real).unwrap();

    let loss = |x: &Tensor, gamma: &Tensor, beta: &Tensor| {
        let mut s = state.clone();
        s.gamma.real = gamma.clone();
        s.beta.real = beta.clone();
        weighted_sum(&batchnorm_forward(x, &mut s, true).unwrap().0, &up)
    };
    let (gamma, beta) = (state.gamma.real.clone(), state.beta.real.clone());
    assert_close("batchnorm input", &gx, &numeric_grad(&x, |x| loss(x, &gamma, &beta)));
    assert_close("batchnorm gamma", &gg, &numeric_grad(&gamma, |g| loss(&x, g, &beta)));
    assert_close("batchnorm beta", &gb, &numeric_grad(&beta, |b| loss(&x, &gamma, b)));
}

#[test]
fn hardtanh_interior_matches_finite_differences() {
    let mut rng = Prng::new(13);
    let x = random(&[30], -0.9, 0.9, &mut rng);
    let up = random(&[30], -1.0, 1.0, &mut rng);
    let gx = hardtanh_backward(&up, &x).unwrap();
    assert_close("hardtanh", &gx, &numeric_grad(&x, |x| weighted_sum(&hardtanh_forward(x), &up)));
}

#[test]
fn softmax_cross_entropy_matches_finite_differences() {
    let mut rng = Prng::new(14);
    let logits = random(&[4, 5], -3.0, 3.0, &mut rng);
    let labels = [0, 3, 4, 1];
    let (_, grad) = softmax_cross_entropy(&logits, &labels).unwrap();
    let numeric = numeric_grad(&logits, |z| softmax_cross_entropy(z, &labels).unwrap().0);
    assert_close("softmax xent", &grad, &numeric);
}

#[test]
fn conv_matches_finite_differences() {
    let mut rng = Prng::new(15);
    let x = random(&[2, 2, 5, 5], -1.0, 1.0, &mut rng);
    let w = random(&[3, 2, 3, 3], -1.0, 1.0, &mut rng);
    for (stride, padding) in [(1, 0), (1, 1), (2, 1)] {
        let out = conv2d_ref(&x, &w, stride, padding).unwrap();
        let up = random(out.dims(), -1.0, 1.0, &mut rng);
        let gx = conv2d_grad_input(&up, &w, x.dims(), stride, padding).unwrap();
        let gw = conv2d_grad_weight(&up, &x, w.dims(), stride, padding).unwrap();
        let loss = |x: &Tensor, w: &Tensor| weighted_sum(&conv2d_ref(x, w, stride, padding).unwrap(), &up);
        assert_close("conv input", &gx, &numeric_grad(&x, |x| loss(x, &w)));
        assert_close("conv weight", &gw, &numeric_grad(&w, |w| loss(&x, w)));
    }
}

#[test]
fn surrogate_matches_closed_form_on_grid() {
    for i in 0..1000 {
        let a = -1.5 + 3.0 * i as f32 / 999.0;
        let closed = if a.abs() <= 1.0 { 2.0 - 2.0 * a.abs() } else { 0.0 };
        assert_eq!(surrogate_grad(a), closed, "a = {a}");
        assert!(surrogate_grad(a) >= 0.0);
    }
    assert_eq!(surrogate_grad(-1e-7), surrogate_grad(1e-7));
}

/// Direct loop over `(n, y, x)` in ascending order.
fn direct_grad_weight(g: &Tensor, a: &Tensor, w_dims: &[usize], stride: usize, padding: usize) -> Tensor {
    let (&[n, c_out, oh, ow], &[_, c_in, h, wd], &[_, _, kh, kw]) = (g.dims(), a.dims(), w_dims) else {
        panic!("rank-4 operands expected");
    };
    let mut out = vec![0.0f32; c_out * c_in * kh * kw];
    for o in 0..c_out {
        for i in 0..c_in {
            for u in 0..kh {
                for v in 0..kw {
                    let mut acc = 0.0f32;
                    for b in 0..n {
                        for y in 0..oh {
                            for x in 0..ow {
                                let iy = (y * stride + u) as isize - padding as isize;
                                let ix = (x * stride + v) as isize - padding as isize;
                                if iy < 0 || ix < 0 || iy as usize >= h || ix as usize >= wd {
                                    continue;
                                }
                                acc += g.at(&[b, o, y, x]) * a.at(&[b, i, iy as usize, ix as usize]);
                            }
                        }
                    }
                    out[((o * c_in + i) * kh + u) * kw + v] = acc;
                }
            }
        }
    }
    Tensor::new(w_dims, out).unwrap()
}

#[test]
fn straight_through_weight_gradient_identity() {
    let mut rng = Prng::new(16);
    for (bits, stride, padding) in [(2, 1, 1), (4, 2, 1), (6, 1, 0), (8, 2, 0)] {
        let a = random(&[2, 3, 6, 6], -1.2, 1.2, &mut rng);
        let p = Parameter::new("w", random(&[4, 3, 3, 3], -1.0, 1.0, &mut rng));
        let ctx = PrecisionContext::new(bits).unwrap();
        let (out, cache) = binary_conv_forward(&a, &p, &ctx, stride, padding).unwrap();
        let up = random(out.dims(), -0.5, 0.5, &mut rng);
        let (gi, gw) = binary_conv_backward(&up, Some(&cache), &ctx).unwrap();

        let q8 = quantize_gradient(&up, 8, GradQuantMode::PerTensorSymmetric).unwrap();
        let a_bin = sign_tensor(&a);
        assert_eq!(gw, direct_grad_weight(&q8, &a_bin, p.real.dims(), stride, padding));

        let a_ps = quantize_tensor(&a, &QuantSpec::symmetric_unit(bits).unwrap());
        let expected = conv2d_grad_input(&q8, &cache.w_bin, a.dims(), stride, padding)
            .unwrap()
            .zip_map(&a_ps, |g, v| g * surrogate_grad(v))
            .unwrap();
        assert_eq!(gi, expected);
    }
}

#[test]
fn binary_linear_weight_gradient_identity() {
    let mut rng = Prng::new(17);
    let a = random(&[5, 7], -1.2, 1.2, &mut rng);
    let p = Parameter::new("w", random(&[3, 7], -1.0, 1.0, &mut rng));
    let ctx = PrecisionContext::new(3).unwrap();
    let (_, cache) = binary_linear_forward(&a, &p, &ctx).unwrap();
    let up = random(&[5, 3], -1.0, 1.0, &mut rng);
    let (_, gw) = binary_linear_backward(&up, Some(&cache), &ctx).unwrap();
    let q8 = quantize_gradient(&up, 8, GradQuantMode::PerTensorSymmetric).unwrap();
    let a_bin = sign_tensor(&a);
    for o in 0..3 {
        for i in 0..7 {
            let mut acc = 0.0f32;
            for b in 0..5 {
                acc += q8.at(&[b, o]) * a_bin.at(&[b, i]);
            }
            assert_eq!(gw.at(&[o, i]), acc);
        }
    }
}

#[test]
fn gradient_quantizer_stays_within_half_step() {
    let mut rng = Prng::new(18);
    let g = random(&[200], -3.0, 3.0, &mut rng);
    let gmax = g.data().iter().fold(0.0f32, |m, v| m.max(v.abs())) as f64;
    let step = 2.0 * gmax / 255.0;
    let q = quantize_gradient(&g, 8, GradQuantMode::PerTensorSymmetric).unwrap();
    let mut levels: Vec<i64> = Vec::new();
    for (&a, &b) in g.data().iter().zip(q.data()) {
        assert!((a as f64 - b as f64).abs() <= step / 2.0 + 1e-6);
        levels.push(((b as f64 + gmax) / step).round() as i64);
    }
    assert!(levels.iter().all(|&k| (0..=255).contains(&k)));
}
