//! Bit-packed ±1 tensors and XNOR/popcount kernels.
//!
//! Encoding: bit `1` ↔ `+1`, bit `0` ↔ `−1`, LSB-first within little-endian
//! `u64` words, so element `i` lives in bit `i % 64` of word `i / 64`.
//! Bits past the logical length are always zero.
//!
//! A ±1 dot product of length `n` is recovered from the mismatch count as
//! `n − 2·popcount(a ⊕ w)`.

use crate::error::{Error, Result};
use crate::tensor::{ConvGeometry, Shape, Tensor};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedBits {
    words: Vec<u64>,
    len: usize,
}

#[inline]
fn word_count(len: usize) -> usize {
    len.div_ceil(64)
}

/// Mask of the valid bits in the last word of a `len`-bit buffer.
#[inline]
fn tail_mask(len: usize) -> u64 {
    match len % 64 {
        0 => u64::MAX,
        r => (1u64 << r) - 1,
    }
}

impl PackedBits {
    /// Wraps raw words, checking the word count and that padding bits are clear.
    pub fn from_words(words: Vec<u64>, len: usize) -> Result<Self> {
        if words.len() != word_count(len) {
            return Err(Error::LengthMismatch { left: words.len(), right: word_count(len) });
        }
        if let Some(&last) = words.last() {
            if last & !tail_mask(len) != 0 {
                return Err(Error::BadCheckpoint("packed padding bits are not zero".into()));
            }
        }
        Ok(PackedBits { words, len })
    }

    pub fn from_signs(values: &[f32]) -> Result<Self> {
        let mut words = vec![0u64; word_count(values.len())];
        for (i, &v) in values.iter().enumerate() {
            if v == 1.0 {
                words[i / 64] |= 1 << (i % 64);
            } else if v != -1.0 {
                return Err(Error::NotBinarized(v));
            }
        }
        Ok(PackedBits { words, len: values.len() })
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn bit(&self, i: usize) -> bool {
        assert!(i < self.len, "bit {i} out of range {}", self.len);
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn to_signs(&self) -> Vec<f32> {
        (0..self.len).map(|i| if self.bit(i) { 1.0 } else { -1.0 }).collect()
    }
}

/// Packs a tensor whose values are all exactly ±1.
pub fn pack(signs: &Tensor) -> Result<PackedBits> {
    PackedBits::from_signs(signs.data())
}

pub fn unpack(bits: &PackedBits, dims: &[usize]) -> Result<Tensor> {
    let shape = Shape::new(dims)?;
    if shape.numel() != bits.len() {
        return Err(Error::LengthMismatch { left: bits.len(), right: shape.numel() });
    }
    Ok(Tensor::from_parts(shape, bits.to_signs()))
}

/// Mismatch count over two equally long word slices of `len` logical bits.
#[inline]
fn mismatches(a: &[u64], w: &[u64], len: usize) -> u32 {
    let Some(last) = a.len().checked_sub(1) else { return 0 };
    let mut count = 0;
    for j in 0..last {
        count += (a[j] ^ w[j]).count_ones();
    }
    count + ((a[last] ^ w[last]) & tail_mask(len)).count_ones()
}

/// Raw `BitCount(a ⊕ w)`: the number of positions where the signs differ.
pub fn mismatch_count(a: &PackedBits, w: &PackedBits) -> Result<u64> {
    if a.len != w.len {
        return Err(Error::LengthMismatch { left: a.len, right: w.len });
    }
    Ok(mismatches(&a.words, &w.words, a.len) as u64)
}

/// ±1 dot product `Σ aᵢwᵢ = n − 2·popcount(a ⊕ w)`.
pub fn xnor_popcount_dot(a: &PackedBits, w: &PackedBits) -> Result<i64> {
    let m = mismatch_count(a, w)? as i64;
    Ok(a.len as i64 - 2 * m)
}

/// Convolution weights regrouped per kernel tap: for every `(o, u, v)` the
/// `c_in` channel signs occupy `words_per_tap` consecutive words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedConvWeights {
    c_out: usize,
    c_in: usize,
    k_h: usize,
    k_w: usize,
    words_per_tap: usize,
    words: Vec<u64>,
}

impl PackedConvWeights {
    pub fn from_tensor(weight: &Tensor) -> Result<Self> {
        let &[c_out, c_in, k_h, k_w] = weight.dims() else {
            return Err(Error::IncompatibleShapes(format!(
                "conv weight must be rank 4, got {:?}",
                weight.dims()
            )));
        };
        Self::from_packed(&pack(weight)?, [c_out, c_in, k_h, k_w])
    }

    /// Regroups a row-major `[c_out, c_in, k_h, k_w]` packing.
    pub fn from_packed(bits: &PackedBits, dims: [usize; 4]) -> Result<Self> {
        let [c_out, c_in, k_h, k_w] = dims;
        let numel = Shape::new(&dims)?.numel();
        if bits.len() != numel {
            return Err(Error::LengthMismatch { left: bits.len(), right: numel });
        }
        let words_per_tap = word_count(c_in);
        let mut words = vec![0u64; c_out * k_h * k_w * words_per_tap];
        for o in 0..c_out {
            for i in 0..c_in {
                for u in 0..k_h {
                    for v in 0..k_w {
                        if bits.bit(((o * c_in + i) * k_h + u) * k_w + v) {
                            let tap = (o * k_h + u) * k_w + v;
                            words[tap * words_per_tap + i / 64] |= 1 << (i % 64);
                        }
                    }
                }
            }
        }
        Ok(PackedConvWeights { c_out, c_in, k_h, k_w, words_per_tap, words })
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.c_out, self.c_in, self.k_h, self.k_w]
    }

    /// Row-major `[c_out, c_in, k_h, k_w]` packing, the on-disk form.
    pub fn to_packed(&self) -> PackedBits {
        let len = self.c_out * self.c_in * self.k_h * self.k_w;
        let mut words = vec![0u64; word_count(len)];
        for o in 0..self.c_out {
            for u in 0..self.k_h {
                for v in 0..self.k_w {
                    let tap = &self.words[((o * self.k_h + u) * self.k_w + v) * self.words_per_tap..];
                    for i in 0..self.c_in {
                        if tap[i / 64] >> (i % 64) & 1 == 1 {
                            let idx = ((o * self.c_in + i) * self.k_h + u) * self.k_w + v;
                            words[idx / 64] |= 1 << (idx % 64);
                        }
                    }
                }
            }
        }
        PackedBits { words, len }
    }
}

/// Transposes a `[c, h, w]` packing into pixel-major channel words.
fn pixel_words(a: &PackedBits, c: usize, h: usize, w: usize, words_per_pixel: usize) -> Vec<u64> {
    let mut out = vec![0u64; h * w * words_per_pixel];
    let plane = h * w;
    for ch in 0..c {
        for p in 0..plane {
            if a.bit(ch * plane + p) {
                out[p * words_per_pixel + ch / 64] |= 1 << (ch % 64);
            }
        }
    }
    out
}

/// XNOR/popcount convolution of a packed `[c_in, h, w]` sign map.
///
/// Taps that fall in the zero padding are skipped, and each window's dot
/// product uses its own valid-tap count, so the result equals
/// [`conv2d_ref`](crate::tensor::conv2d_ref) on the unpacked operands exactly.
pub fn packed_conv2d(
    a: &PackedBits,
    a_dims: &[usize],
    w: &PackedConvWeights,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let g = ConvGeometry::resolve(a_dims, &w.dims(), stride, padding)?;
    if !g.unbatched {
        return Err(Error::IncompatibleShapes(format!(
            "packed conv takes one [c,h,w] sample, got {a_dims:?}"
        )));
    }
    if a.len() != g.c_in * g.height * g.width {
        return Err(Error::LengthMismatch { left: a.len(), right: g.c_in * g.height * g.width });
    }
    let wpt = w.words_per_tap;
    let pixels = pixel_words(a, g.c_in, g.height, g.width, wpt);
    let mut out = vec![0.0f32; g.c_out * g.out_h * g.out_w];
    for o in 0..g.c_out {
        let w_out = &w.words[o * g.k_h * g.k_w * wpt..(o + 1) * g.k_h * g.k_w * wpt];
        for y in 0..g.out_h {
            for x in 0..g.out_w {
                let mut mism = 0u32;
                let mut valid = 0usize;
                for u in 0..g.k_h {
                    let Some(iy) = g.input_row(y, u) else { continue };
                    for v in 0..g.k_w {
                        let ix = (x * g.stride + v) as isize - g.padding as isize;
                        if ix < 0 || ix as usize >= g.width {
                            continue;
                        }
                        let pix = &pixels[(iy * g.width + ix as usize) * wpt..][..wpt];
                        let tap = &w_out[(u * g.k_w + v) * wpt..][..wpt];
                        mism += mismatches(pix, tap, g.c_in);
                        valid += g.c_in;
                    }
                }
                out[(o * g.out_h + y) * g.out_w + x] = (valid as i64 - 2 * mism as i64) as f32;
            }
        }
    }
    Ok(Tensor::from_parts(Shape::new(&g.output_dims())?, out))
}

/// Row-packed `[rows, cols]` sign matrix for binary linear layers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedMatrix {
    rows: usize,
    cols: usize,
    row_words: usize,
    words: Vec<u64>,
}

impl PackedMatrix {
    pub fn from_tensor(weight: &Tensor) -> Result<Self> {
        let &[rows, cols] = weight.dims() else {
            return Err(Error::IncompatibleShapes(format!("expected rank 2, got {:?}", weight.dims())));
        };
        Self::from_packed(&pack(weight)?, [rows, cols])
    }

    pub fn from_packed(bits: &PackedBits, dims: [usize; 2]) -> Result<Self> {
        let [rows, cols] = dims;
        if bits.len() != rows * cols {
            return Err(Error::LengthMismatch { left: bits.len(), right: rows * cols });
        }
        let row_words = word_count(cols);
        let mut words = vec![0u64; rows * row_words];
        for r in 0..rows {
            for c in 0..cols {
                if bits.bit(r * cols + c) {
                    words[r * row_words + c / 64] |= 1 << (c % 64);
                }
            }
        }
        Ok(PackedMatrix { rows, cols, row_words, words })
    }

    pub fn dims(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn to_packed(&self) -> PackedBits {
        let len = self.rows * self.cols;
        let mut words = vec![0u64; word_count(len)];
        for r in 0..self.rows {
            for c in 0..self.cols {
                if self.words[r * self.row_words + c / 64] >> (c % 64) & 1 == 1 {
                    let idx = r * self.cols + c;
                    words[idx / 64] |= 1 << (idx % 64);
                }
            }
        }
        PackedBits { words, len }
    }
}

/// `out[r] = Σ_c a[c]·w[r,c]` for a packed sign vector `a`.
pub fn packed_matvec(a: &PackedBits, w: &PackedMatrix) -> Result<Vec<f32>> {
    if a.len() != w.cols {
        return Err(Error::LengthMismatch { left: a.len(), right: w.cols });
    }
    Ok((0..w.rows)
        .map(|r| {
            let row = &w.words[r * w.row_words..(r + 1) * w.row_words];
            (w.cols as i64 - 2 * mismatches(&a.words, row, w.cols) as i64) as f32
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::conv2d_ref;

    fn signs(dims: &[usize], seed: u64) -> Tensor {
        let mut state = seed;
        let n: usize = dims.iter().product();
        let data = (0..n)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                if state >> 63 == 1 { 1.0 } else { -1.0 }
            })
            .collect();
        Tensor::new(dims, data).unwrap()
    }

    #[test]
    fn pack_layout_is_lsb_first() {
        let p = pack(&Tensor::new(&[3], vec![1.0, -1.0, 1.0]).unwrap()).unwrap();
        assert_eq!(p.words(), &[0b101]);
        assert_eq!(p.len(), 3);
    }

    #[test]
    fn pack_rejects_non_signs() {
        let err = pack(&Tensor::new(&[1], vec![0.5]).unwrap()).unwrap_err();
        assert_eq!(err.code(), "not-binarized");
    }

    #[test]
    fn from_words_validates() {
        assert!(PackedBits::from_words(vec![0b111], 3).is_ok());
        assert!(PackedBits::from_words(vec![0b1000], 3).is_err());
        assert!(PackedBits::from_words(vec![0, 0], 3).is_err());
        assert!(PackedBits::from_words(vec![u64::MAX], 64).is_ok());
    }

    #[test]
    fn dot_examples() {
        let a = PackedBits::from_signs(&[1.0, -1.0, 1.0]).unwrap();
        let w = PackedBits::from_signs(&[1.0, 1.0, -1.0]).unwrap();
        assert_eq!(mismatch_count(&a, &w).unwrap(), 2);
        assert_eq!(xnor_popcount_dot(&a, &w).unwrap(), -1);
        for n in [1, 63, 64, 65, 200] {
            let x = signs(&[n], n as u64);
            let px = pack(&x).unwrap();
            let neg = pack(&x.scale(-1.0)).unwrap();
            assert_eq!(xnor_popcount_dot(&px, &px).unwrap(), n as i64);
            assert_eq!(xnor_popcount_dot(&px, &neg).unwrap(), -(n as i64));
        }
        let short = PackedBits::from_signs(&[1.0]).unwrap();
        assert_eq!(xnor_popcount_dot(&a, &short).unwrap_err().code(), "length-mismatch");
    }

    #[test]
    fn conv_all_agree() {
        let a = pack(&Tensor::full(&[1, 3, 3], 1.0).unwrap()).unwrap();
        let w = PackedConvWeights::from_tensor(&Tensor::full(&[1, 1, 3, 3], 1.0).unwrap()).unwrap();
        assert_eq!(packed_conv2d(&a, &[1, 3, 3], &w, 1, 0).unwrap().data(), &[9.0]);
    }

    #[test]
    fn conv_matches_reference_with_padding() {
        for (seed, c_in) in [(1, 2), (2, 70), (3, 130)] {
            let x = signs(&[c_in, 6, 5], seed);
            let wt = signs(&[3, c_in, 3, 3], seed + 100);
            let pw = PackedConvWeights::from_tensor(&wt).unwrap();
            for (stride, pad) in [(1, 0), (1, 1), (2, 1), (2, 2), (3, 0)] {
                let expected = conv2d_ref(&x, &wt, stride, pad).unwrap();
                let got = packed_conv2d(&pack(&x).unwrap(), x.dims(), &pw, stride, pad).unwrap();
                assert_eq!(got, expected, "c_in={c_in} stride={stride} pad={pad}");
            }
        }
    }

    #[test]
    fn weight_regrouping_round_trips() {
        let wt = signs(&[4, 67, 2, 3], 9);
        let pw = PackedConvWeights::from_tensor(&wt).unwrap();
        assert_eq!(pw.to_packed(), pack(&wt).unwrap());
        let m = signs(&[5, 130], 4);
        let pm = PackedMatrix::from_tensor(&m).unwrap();
        assert_eq!(pm.to_packed(), pack(&m).unwrap());
    }

    #[test]
    fn matvec_matches_matmul() {
        let m = signs(&[5, 130], 4);
        let a = signs(&[1, 130], 5);
        let expected = crate::tensor::matmul(&a, &crate::tensor::transpose(&m).unwrap()).unwrap();
        let got = packed_matvec(&pack(&a).unwrap(), &PackedMatrix::from_tensor(&m).unwrap()).unwrap();
        assert_eq!(got, expected.data());
    }
}
