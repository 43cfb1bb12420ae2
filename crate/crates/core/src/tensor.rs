//! Dense row-major `f32` tensors and the float reference kernels
//! (convolution, matrix product, moments) that every other module is
//! checked against.
//!
//! Summation order is fixed: a convolution output accumulates its taps in
//! lexicographic `(c_in, k_h, k_w)` order starting from `0.0`, and a matrix
//! product accumulates over the inner dimension left to right. Results are
//! therefore bit-reproducible on a given platform.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: &[usize]) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidShape("rank 0".into()));
        }
        if let Some(pos) = dims.iter().position(|&d| d == 0) {
            return Err(Error::InvalidShape(format!("dimension {pos} is zero in {dims:?}")));
        }
        dims.iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| u64::try_from(n).is_ok())
            .ok_or_else(|| Error::InvalidShape(format!("element count overflows: {dims:?}")))?;
        Ok(Shape(dims.to_vec()))
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    /// Row-major strides in elements.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.0.len()];
        for i in (0..self.0.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.0[i + 1];
        }
        strides
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f32>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.data.len() <= 16 {
            write!(f, "Tensor{:?}{:?}", self.shape, self.data)
        } else {
            write!(f, "Tensor{:?}[{} values]", self.shape, self.data.len())
        }
    }
}

impl Tensor {
    /// Builds a tensor, rejecting length mismatches and non-finite values.
    pub fn new(dims: &[usize], data: Vec<f32>) -> Result<Self> {
        let shape = Shape::new(dims)?;
        if shape.numel() != data.len() {
            return Err(Error::IncompatibleShapes(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                shape.numel(),
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        Ok(Tensor { shape, data })
    }

    /// Internal constructor for kernels whose output length is correct by construction.
    pub(crate) fn from_parts(shape: Shape, data: Vec<f32>) -> Self {
        debug_assert_eq!(shape.numel(), data.len());
        Tensor { shape, data }
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        Self::full(dims, 0.0)
    }

    pub fn full(dims: &[usize], value: f32) -> Result<Self> {
        let shape = Shape::new(dims)?;
        let n = shape.numel();
        Ok(Tensor { shape, data: vec![value; n] })
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Element at a multi-index. Panics on rank or bounds violations.
    pub fn at(&self, index: &[usize]) -> f32 {
        assert_eq!(index.len(), self.shape.rank(), "index rank");
        let offset = index
            .iter()
            .zip(self.shape.strides())
            .zip(self.dims())
            .map(|((&i, s), &d)| {
                assert!(i < d, "index {i} out of bounds for dimension {d}");
                i * s
            })
            .sum::<usize>();
        self.data[offset]
    }

    /// Same values under a new shape with equal element count.
    pub fn reshape(self, dims: &[usize]) -> Result<Self> {
        let shape = Shape::new(dims)?;
        if shape.numel() != self.data.len() {
            return Err(Error::IncompatibleShapes(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        Ok(Tensor { shape, data: self.data })
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    /// Elementwise combination of two same-shaped tensors.
    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f32, f32) -> f32) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::IncompatibleShapes(format!(
                "{:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Tensor::from_parts(self.shape.clone(), data))
    }

    pub fn scale(&self, factor: f32) -> Tensor {
        self.map(|v| v * factor)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Resolved geometry of one 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub c_in: usize,
    pub height: usize,
    pub width: usize,
    pub c_out: usize,
    pub k_h: usize,
    pub k_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
    /// Whether the input was rank 3 (unbatched).
    pub unbatched: bool,
}

/// Output spatial size `⌊(size + 2·pad − k)/s⌋ + 1`.
pub fn conv_out_size(size: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::InvalidShape("stride must be positive".into()));
    }
    let padded = size + 2 * padding;
    if kernel > padded {
        return Err(Error::KernelTooLarge(format!(
            "kernel {kernel} exceeds padded input {padded}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

impl ConvGeometry {
    pub fn resolve(input: &[usize], weight: &[usize], stride: usize, padding: usize) -> Result<Self> {
        let (batch, c_in, height, width, unbatched) = match *input {
            [c, h, w] => (1, c, h, w, true),
            [n, c, h, w] => (n, c, h, w, false),
            _ => {
                return Err(Error::IncompatibleShapes(format!(
                    "conv input must be [c,h,w] or [n,c,h,w], got {input:?}"
                )))
            }
        };
        let [c_out, wc_in, k_h, k_w] = *weight else {
            return Err(Error::IncompatibleShapes(format!(
                "conv weight must be [c_out,c_in,k_h,k_w], got {weight:?}"
            )));
        };
        if wc_in != c_in {
            return Err(Error::IncompatibleShapes(format!(
                "input has {c_in} channels, weight expects {wc_in}"
            )));
        }
        let out_h = conv_out_size(height, k_h, stride, padding)?;
        let out_w = conv_out_size(width, k_w, stride, padding)?;
        Ok(ConvGeometry {
            batch,
            c_in,
            height,
            width,
            c_out,
            k_h,
            k_w,
            stride,
            padding,
            out_h,
            out_w,
            unbatched,
        })
    }

    pub fn output_dims(&self) -> Vec<usize> {
        if self.unbatched {
            vec![self.c_out, self.out_h, self.out_w]
        } else {
            vec![self.batch, self.c_out, self.out_h, self.out_w]
        }
    }

    pub fn input_dims(&self) -> Vec<usize> {
        if self.unbatched {
            vec![self.c_in, self.height, self.width]
        } else {
            vec![self.batch, self.c_in, self.height, self.width]
        }
    }

    /// Input row touched by output row `y` at kernel row `u`, if inside the image.
    #[inline]
    pub fn input_row(&self, y: usize, u: usize) -> Option<usize> {
        let iy = (y * self.stride + u) as isize - self.padding as isize;
        (iy >= 0 && (iy as usize) < self.height).then_some(iy as usize)
    }

    /// Half-open range of output columns whose tap `v` lands inside the image.
    #[inline]
    pub fn valid_cols(&self, v: usize) -> (usize, usize) {
        let (s, pad, w) = (self.stride, self.padding, self.width);
        let lo = if pad > v { (pad - v).div_ceil(s) } else { 0 };
        // x·s + v − pad ≤ w − 1
        let hi = if w + pad > v { ((w - 1 + pad - v) / s + 1).min(self.out_w) } else { 0 };
        (lo.min(hi), hi)
    }
}

/// Zero-padded cross-correlation `out[o,y,x] = Σ_{i,u,v} in[i, y·s−pad+u, x·s−pad+v]·w[o,i,u,v]`.
///
/// Accepts `[c_in,h,w]` or `[n,c_in,h,w]` input and returns the matching rank.
pub fn conv2d_ref(input: &Tensor, weight: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let g = ConvGeometry::resolve(input.dims(), weight.dims(), stride, padding)?;
    let in_plane = g.height * g.width;
    let out_plane = g.out_h * g.out_w;
    let k_area = g.k_h * g.k_w;
    let mut out = vec![0.0f32; g.batch * g.c_out * out_plane];
    let (src, wts) = (input.data(), weight.data());
    let col_ranges: Vec<_> = (0..g.k_w).map(|v| g.valid_cols(v)).collect();

    for n in 0..g.batch {
        let sample = &src[n * g.c_in * in_plane..(n + 1) * g.c_in * in_plane];
        for o in 0..g.c_out {
            let dst = &mut out[(n * g.c_out + o) * out_plane..(n * g.c_out + o + 1) * out_plane];
            for i in 0..g.c_in {
                let plane = &sample[i * in_plane..(i + 1) * in_plane];
                let kernel = &wts[(o * g.c_in + i) * k_area..(o * g.c_in + i + 1) * k_area];
                for u in 0..g.k_h {
                    for v in 0..g.k_w {
                        let wv = kernel[u * g.k_w + v];
                        let (x_lo, x_hi) = col_ranges[v];
                        if x_lo == x_hi {
                            continue;
                        }
                        for y in 0..g.out_h {
                            let Some(iy) = g.input_row(y, u) else { continue };
                            let row = &plane[iy * g.width..(iy + 1) * g.width];
                            let dst_row = &mut dst[y * g.out_w..(y + 1) * g.out_w];
                            if g.stride == 1 {
                                let src = &row[x_lo + v - g.padding..x_hi + v - g.padding];
                                for (d, &a) in dst_row[x_lo..x_hi].iter_mut().zip(src) {
                                    *d += wv * a;
                                }
                            } else {
                                for x in x_lo..x_hi {
                                    dst_row[x] += wv * row[x * g.stride + v - g.padding];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(Shape::new(&g.output_dims())?, out))
}

/// Gradient of [`conv2d_ref`] with respect to its input.
///
/// `input_dims` is the shape of the forward input; `grad_out` has the forward output shape.
pub fn conv2d_grad_input(
    grad_out: &Tensor,
    weight: &Tensor,
    input_dims: &[usize],
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let g = ConvGeometry::resolve(input_dims, weight.dims(), stride, padding)?;
    if grad_out.dims() != g.output_dims().as_slice() {
        return Err(Error::IncompatibleShapes(format!(
            "upstream {:?} does not match conv output {:?}",
            grad_out.dims(),
            g.output_dims()
        )));
    }
    let in_plane = g.height * g.width;
    let out_plane = g.out_h * g.out_w;
    let k_area = g.k_h * g.k_w;
    let mut grad = vec![0.0f32; g.batch * g.c_in * in_plane];
    let (up, wts) = (grad_out.data(), weight.data());
    let col_ranges: Vec<_> = (0..g.k_w).map(|v| g.valid_cols(v)).collect();

    for n in 0..g.batch {
        let dst_sample = &mut grad[n * g.c_in * in_plane..(n + 1) * g.c_in * in_plane];
        for o in 0..g.c_out {
            let up_plane = &up[(n * g.c_out + o) * out_plane..(n * g.c_out + o + 1) * out_plane];
            for i in 0..g.c_in {
                let dst = &mut dst_sample[i * in_plane..(i + 1) * in_plane];
                let kernel = &wts[(o * g.c_in + i) * k_area..(o * g.c_in + i + 1) * k_area];
                for u in 0..g.k_h {
                    for v in 0..g.k_w {
                        let wv = kernel[u * g.k_w + v];
                        let (x_lo, x_hi) = col_ranges[v];
                        if x_lo == x_hi {
                            continue;
                        }
                        for y in 0..g.out_h {
                            let Some(iy) = g.input_row(y, u) else { continue };
                            let up_row = &up_plane[y * g.out_w..(y + 1) * g.out_w];
                            let dst_row = &mut dst[iy * g.width..(iy + 1) * g.width];
                            if g.stride == 1 {
                                let dst = &mut dst_row[x_lo + v - g.padding..x_hi + v - g.padding];
                                for (d, &gv) in dst.iter_mut().zip(&up_row[x_lo..x_hi]) {
                                    *d += gv * wv;
                                }
                            } else {
                                for x in x_lo..x_hi {
                                    dst_row[x * g.stride + v - g.padding] += up_row[x] * wv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(Shape::new(&g.input_dims())?, grad))
}

/// Gradient of [`conv2d_ref`] with respect to its weight, summed over the batch.
///
/// Each weight gradient accumulates `grad_out·input` over `(n, y, x)` in
/// ascending order.
pub fn conv2d_grad_weight(
    grad_out: &Tensor,
    input: &Tensor,
    weight_dims: &[usize],
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let g = ConvGeometry::resolve(input.dims(), weight_dims, stride, padding)?;
    if grad_out.dims() != g.output_dims().as_slice() {
        return Err(Error::IncompatibleShapes(format!(
            "upstream {:?} does not match conv output {:?}",
            grad_out.dims(),
            g.output_dims()
        )));
    }
    let in_plane = g.height * g.width;
    let out_plane = g.out_h * g.out_w;
    let mut grad = vec![0.0f32; g.c_out * g.c_in * g.k_h * g.k_w];
    let (up, src) = (grad_out.data(), input.data());
    let col_ranges: Vec<_> = (0..g.k_w).map(|v| g.valid_cols(v)).collect();

    for o in 0..g.c_out {
        for i in 0..g.c_in {
            for u in 0..g.k_h {
                for v in 0..g.k_w {
                    let (x_lo, x_hi) = col_ranges[v];
                    if x_lo == x_hi {
                        continue;
                    }
                    let mut acc = 0.0f32;
                    for n in 0..g.batch {
                        let up_plane =
                            &up[(n * g.c_out + o) * out_plane..(n * g.c_out + o + 1) * out_plane];
                        let plane =
                            &src[(n * g.c_in + i) * in_plane..(n * g.c_in + i + 1) * in_plane];
                        for y in 0..g.out_h {
                            let Some(iy) = g.input_row(y, u) else { continue };
                            let up_row = &up_plane[y * g.out_w..(y + 1) * g.out_w];
                            let row = &plane[iy * g.width..(iy + 1) * g.width];
                            if g.stride == 1 {
                                let src = &row[x_lo + v - g.padding..x_hi + v - g.padding];
                                for (&gv, &a) in up_row[x_lo..x_hi].iter().zip(src) {
                                    acc += gv * a;
                                }
                            } else {
                                for x in x_lo..x_hi {
                                    acc += up_row[x] * row[x * g.stride + v - g.padding];
                                }
                            }
                        }
                    }
                    grad[((o * g.c_in + i) * g.k_h + u) * g.k_w + v] = acc;
                }
            }
        }
    }
    Ok(Tensor::from_parts(Shape::new(weight_dims)?, grad))
}

/// `[n,k] × [k,m] → [n,m]`, accumulating over `k` left to right.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (&[n, k], &[k2, m]) = (a.dims(), b.dims()) else {
        return Err(Error::IncompatibleShapes(format!(
            "matmul needs rank-2 operands, got {:?} and {:?}",
            a.dims(),
            b.dims()
        )));
    };
    if k != k2 {
        return Err(Error::IncompatibleShapes(format!(
            "inner dimensions differ: {:?} × {:?}",
            a.dims(),
            b.dims()
        )));
    }
    let mut out = vec![0.0f32; n * m];
    for (row, dst) in out.chunks_exact_mut(m).enumerate() {
        let a_row = &a.data()[row * k..(row + 1) * k];
        for (kk, &av) in a_row.iter().enumerate() {
            let b_row = &b.data()[kk * m..(kk + 1) * m];
            for (d, &bv) in dst.iter_mut().zip(b_row) {
                *d += av * bv;
            }
        }
    }
    Ok(Tensor::from_parts(Shape::new(&[n, m])?, out))
}

/// Matrix transpose of a rank-2 tensor.
pub fn transpose(t: &Tensor) -> Result<Tensor> {
    let &[r, c] = t.dims() else {
        return Err(Error::IncompatibleShapes(format!("transpose needs rank 2, got {:?}", t.dims())));
    };
    let mut out = vec![0.0f32; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = t.data()[i * c + j];
        }
    }
    Ok(Tensor::from_parts(Shape::new(&[c, r])?, out))
}

/// Mean and population standard deviation (divisor `n`), accumulated in `f64`.
pub fn stats(t: &Tensor) -> Result<(f32, f32)> {
    let (mean, std) = stats_f64(t.data())?;
    Ok((mean as f32, std as f32))
}

pub(crate) fn stats_f64(values: &[f32]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::EmptyTensor);
    }
    let n = values.len() as f64;
    let mean = values.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = values.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}
