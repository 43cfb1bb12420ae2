//! Bit-packed inference model and the `CBNP` file format.
//!
//! Binary layers hold their standardized-then-binarized weights as packed
//! sign bits and run on the XNOR/popcount kernels; every other layer reuses
//! the float code of the training path, so logits agree bit for bit with
//! [`Network::infer`](super::Network::infer).
//!
//! File layout (all little-endian), documented in full in `docs/formats.md`:
//!
//! ```text
//! "CBNP" | u32 version = 1 | u32 input_rank | input_rank × u32 dims | u32 layer_count
//! layer table, per layer:
//!   u8 kind | 5 × u32 hyperparameters | f32 eps | f32 momentum
//!   u8 tensor_count | per tensor: u8 encoding (0 = f32, 1 = sign bits) | u8 rank | rank × u32 dims
//! payload: tensors in table order;
//!   f32 tensors as raw floats, sign-bit tensors as ⌈numel/64⌉ u64 words,
//!   row-major element order, LSB-first within each word, bit 1 ↔ +1
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::binary::binarize_weights;
use super::layers::{batchnorm_eval, flatten, hardtanh_forward, linear_forward, maxpool_forward, BatchNormState};
use super::network::{Layer, LayerSpec, Network};
use crate::bitkernel::{packed_conv2d, packed_matvec, PackedBits, PackedConvWeights, PackedMatrix};
use crate::error::{Error, Result};
use crate::quant::sign_tensor;
use crate::tensor::{conv2d_ref, Tensor};

pub const MAGIC: &[u8; 4] = b"CBNP";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub enum PackedLayer {
    FpConv { weight: Tensor, stride: usize, padding: usize },
    BinaryConv { weight: PackedConvWeights, stride: usize, padding: usize },
    FpLinear { weight: Tensor, bias: Tensor },
    BinaryLinear { weight: PackedMatrix },
    BatchNorm { state: BatchNormState },
    Hardtanh,
    MaxPool { size: usize },
    Flatten,
}

#[derive(Debug, Clone)]
pub struct PackedModel {
    input_dims: Vec<usize>,
    layers: Vec<PackedLayer>,
}

impl PackedModel {
    /// Standardizes and binarizes every binary layer. Fails with
    /// `zero-variance-weights` if a binary layer's weights are constant zero.
    pub fn from_network(net: &Network) -> Result<Self> {
        let layers = net
            .layers()
            .iter()
            .map(|layer| {
                Ok(match layer {
                    Layer::FpConv { weight, stride, padding, .. } => {
                        PackedLayer::FpConv { weight: weight.real.clone(), stride: *stride, padding: *padding }
                    }
                    Layer::BinaryConv { weight, stride, padding, .. } => {
                        let (_, w_bin) = binarize_weights(weight)?;
                        PackedLayer::BinaryConv {
                            weight: PackedConvWeights::from_tensor(&w_bin)?,
                            stride: *stride,
                            padding: *padding,
                        }
                    }
                    Layer::FpLinear { weight, bias, .. } => {
                        PackedLayer::FpLinear { weight: weight.real.clone(), bias: bias.real.clone() }
                    }
                    Layer::BinaryLinear { weight, .. } => {
                        let (_, w_bin) = binarize_weights(weight)?;
                        PackedLayer::BinaryLinear { weight: PackedMatrix::from_tensor(&w_bin)? }
                    }
                    Layer::BatchNorm { state, .. } => PackedLayer::BatchNorm { state: state.clone() },
                    Layer::Hardtanh { .. } => PackedLayer::Hardtanh,
                    Layer::MaxPool { size, .. } => PackedLayer::MaxPool { size: *size },
                    Layer::Flatten { .. } => PackedLayer::Flatten,
                })
            })
            .collect::<Result<_>>()?;
        Ok(PackedModel { input_dims: net.input_dims().to_vec(), layers })
    }

    pub fn input_dims(&self) -> &[usize] {
        &self.input_dims
    }

    pub fn layers(&self) -> &[PackedLayer] {
        &self.layers
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.dims().len() != self.input_dims.len() + 1 || x.dims()[1..] != self.input_dims[..] {
            return Err(Error::IncompatibleShapes(format!(
                "model expects [n, {:?}], got {:?}",
                self.input_dims,
                x.dims()
            )));
        }
        let mut h = x.clone();
        for layer in &self.layers {
            h = match layer {
                PackedLayer::FpConv { weight, stride, padding } => conv2d_ref(&h, weight, *stride, *padding)?,
                PackedLayer::BinaryConv { weight, stride, padding } => binary_conv(&h, weight, *stride, *padding)?,
                PackedLayer::FpLinear { weight, bias } => linear_forward(&h, weight, Some(bias))?,
                PackedLayer::BinaryLinear { weight } => binary_linear(&h, weight)?,
                PackedLayer::BatchNorm { state } => batchnorm_eval(&h, state)?,
                PackedLayer::Hardtanh => hardtanh_forward(&h),
                PackedLayer::MaxPool { size } => maxpool_forward(&h, *size)?.0,
                PackedLayer::Flatten => flatten(&h)?,
            };
        }
        Ok(h)
    }
}

fn binary_conv(x: &Tensor, w: &PackedConvWeights, stride: usize, padding: usize) -> Result<Tensor> {
    let n = x.dims()[0];
    let sample_dims = &x.dims()[1..];
    let per = x.len() / n;
    let signs = sign_tensor(x);
    let mut out = Vec::new();
    let mut out_sample = Vec::new();
    for s in signs.data().chunks_exact(per) {
        let bits = PackedBits::from_signs(s)?;
        let y = packed_conv2d(&bits, sample_dims, w, stride, padding)?;
        out_sample = y.dims().to_vec();
        out.extend_from_slice(y.data());
    }
    let mut dims = vec![n];
    dims.extend(out_sample);
    Tensor::new(&dims, out)
}

fn binary_linear(x: &Tensor, w: &PackedMatrix) -> Result<Tensor> {
    let &[n, features] = x.dims() else {
        return Err(Error::IncompatibleShapes(format!("binary linear needs [n, in], got {:?}", x.dims())));
    };
    let signs = sign_tensor(x);
    let mut out = Vec::with_capacity(n * w.dims()[0]);
    for row in signs.data().chunks_exact(features) {
        out.extend(packed_matvec(&PackedBits::from_signs(row)?, w)?);
    }
    Tensor::new(&[n, w.dims()[0]], out)
}

enum Payload<'a> {
    Float(&'a Tensor),
    Bits(PackedBits, Vec<usize>),
}

fn layer_header(layer: &PackedLayer) -> (u8, [usize; 5], f32, f32, Vec<Payload<'_>>) {
    match layer {
        PackedLayer::FpConv { weight, stride, padding } => {
            let d = weight.dims();
            (0, [d[1], d[0], d[2], *stride, *padding], 0.0, 0.0, vec![Payload::Float(weight)])
        }
        PackedLayer::BinaryConv { weight, stride, padding } => {
            let [o, i, kh, kw] = weight.dims();
            (1, [i, o, kh, *stride, *padding], 0.0, 0.0, vec![Payload::Bits(weight.to_packed(), vec![o, i, kh, kw])])
        }
        PackedLayer::FpLinear { weight, bias } => {
            let d = weight.dims();
            (2, [d[1], d[0], 0, 0, 0], 0.0, 0.0, vec![Payload::Float(weight), Payload::Float(bias)])
        }
        PackedLayer::BinaryLinear { weight } => {
            let [o, i] = weight.dims();
            (3, [i, o, 0, 0, 0], 0.0, 0.0, vec![Payload::Bits(weight.to_packed(), vec![o, i])])
        }
        PackedLayer::BatchNorm { state } => (
            4,
            [state.channels(), 0, 0, 0, 0],
            state.eps,
            state.momentum,
            vec![
                Payload::Float(&state.gamma.real),
                Payload::Float(&state.beta.real),
                Payload::Float(&state.running_mean),
                Payload::Float(&state.running_var),
            ],
        ),
        PackedLayer::Hardtanh => (5, [0; 5], 0.0, 0.0, Vec::new()),
        PackedLayer::MaxPool { size } => (6, [*size, 0, 0, 0, 0], 0.0, 0.0, Vec::new()),
        PackedLayer::Flatten => (7, [0; 5], 0.0, 0.0, Vec::new()),
    }
}

fn put_u32<W: Write>(out: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::BadCheckpoint(format!("value {v} exceeds u32")))?;
    out.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn write_packed<W: Write>(mut out: W, model: &PackedModel) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    put_u32(&mut out, model.input_dims.len())?;
    for &d in &model.input_dims {
        put_u32(&mut out, d)?;
    }
    put_u32(&mut out, model.layers.len())?;
    let headers: Vec<_> = model.layers.iter().map(layer_header).collect();
    for (kind, hyper, eps, momentum, tensors) in &headers {
        out.write_all(&[*kind])?;
        for &h in hyper {
            put_u32(&mut out, h)?;
        }
        out.write_all(&eps.to_le_bytes())?;
        out.write_all(&momentum.to_le_bytes())?;
        out.write_all(&[tensors.len() as u8])?;
        for t in tensors {
            let (encoding, dims) = match t {
                Payload::Float(t) => (0u8, t.dims()),
                Payload::Bits(_, dims) => (1u8, dims.as_slice()),
            };
            out.write_all(&[encoding, dims.len() as u8])?;
            for &d in dims {
                put_u32(&mut out, d)?;
            }
        }
    }
    for (_, _, _, _, tensors) in &headers {
        for t in tensors {
            match t {
                Payload::Float(t) => {
                    for &x in t.data() {
                        out.write_all(&x.to_le_bytes())?;
                    }
                }
                Payload::Bits(bits, _) => {
                    for &w in bits.words() {
                        out.write_all(&w.to_le_bytes())?;
                    }
                }
            }
        }
    }
    out.flush()?;
    Ok(())
}

pub fn save_packed(path: &Path, model: &PackedModel) -> Result<()> {
    write_packed(BufWriter::new(File::create(path)?), model)
}

struct Reader<R>(R);

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.0.read_exact(&mut b)?;
        Ok(b)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.bytes()?) as usize)
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.bytes()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }
}

struct Entry {
    kind: u8,
    hyper: [usize; 5],
    eps: f32,
    momentum: f32,
    tensors: Vec<(u8, Vec<usize>)>,
}

fn numel(dims: &[usize]) -> Result<usize> {
    dims.iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .filter(|&n| n <= 1 << 31)
        .ok_or_else(|| Error::BadCheckpoint(format!("tensor {dims:?} too large")))
}

pub fn read_packed<R: Read>(r: R) -> Result<PackedModel> {
    let mut r = Reader(r);
    let magic: [u8; 4] = r.bytes().map_err(|_| Error::BadCheckpointMagic)?;
    if &magic != MAGIC {
        return Err(Error::BadCheckpointMagic);
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(Error::BadCheckpoint(format!("unsupported packed version {version}")));
    }
    let rank = r.u32()?;
    let input_dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let count = r.u32()?;
    let mut entries = Vec::new();
    for _ in 0..count {
        let kind = r.u8()?;
        let mut hyper = [0usize; 5];
        for h in &mut hyper {
            *h = r.u32()?;
        }
        let eps = r.f32()?;
        let momentum = r.f32()?;
        let n_tensors = r.u8()?;
        let mut tensors = Vec::new();
        for _ in 0..n_tensors {
            let encoding = r.u8()?;
            let rank = r.u8()?;
            tensors.push((encoding, (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?));
        }
        entries.push(Entry { kind, hyper, eps, momentum, tensors });
    }

    enum Loaded {
        Float(Tensor),
        Bits(PackedBits, Vec<usize>),
    }
    let bad = |msg: String| Error::BadCheckpoint(msg);
    let mut layers = Vec::new();
    for (index, e) in entries.into_iter().enumerate() {
        let mut loaded = Vec::new();
        for (encoding, dims) in &e.tensors {
            let n = numel(dims)?;
            loaded.push(match encoding {
                0 => {
                    let data = (0..n).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
                    Loaded::Float(Tensor::new(dims, data).map_err(|err| bad(format!("layer {index}: {err}")))?)
                }
                1 => {
                    let words = (0..n.div_ceil(64)).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
                    Loaded::Bits(PackedBits::from_words(words, n)?, dims.clone())
                }
                other => return Err(bad(format!("layer {index}: unknown encoding {other}"))),
            });
        }
        let shape_err = || bad(format!("layer {index}: unexpected tensor set for kind {}", e.kind));
        let [h0, _, _, h3, h4] = e.hyper;
        let layer = match (e.kind, loaded.as_slice()) {
            (0, [Loaded::Float(w)]) => PackedLayer::FpConv { weight: w.clone(), stride: h3, padding: h4 },
            (1, [Loaded::Bits(bits, dims)]) if dims.len() == 4 => PackedLayer::BinaryConv {
                weight: PackedConvWeights::from_packed(bits, [dims[0], dims[1], dims[2], dims[3]])?,
                stride: h3,
                padding: h4,
            },
            (2, [Loaded::Float(w), Loaded::Float(b)]) => PackedLayer::FpLinear { weight: w.clone(), bias: b.clone() },
            (3, [Loaded::Bits(bits, dims)]) if dims.len() == 2 => {
                PackedLayer::BinaryLinear { weight: PackedMatrix::from_packed(bits, [dims[0], dims[1]])? }
            }
            (4, [Loaded::Float(g), Loaded::Float(b), Loaded::Float(m), Loaded::Float(v)]) => {
                let mut state = BatchNormState::new(&format!("{index}.batchnorm"), h0, e.eps, e.momentum)?;
                for (dst, src) in [
                    (&mut state.gamma.real, g),
                    (&mut state.beta.real, b),
                    (&mut state.running_mean, m),
                    (&mut state.running_var, v),
                ] {
                    if dst.dims() != src.dims() {
                        return Err(shape_err());
                    }
                    *dst = src.clone();
                }
                PackedLayer::BatchNorm { state }
            }
            (5, []) => PackedLayer::Hardtanh,
            (6, []) => PackedLayer::MaxPool { size: h0 },
            (7, []) => PackedLayer::Flatten,
            _ => return Err(shape_err()),
        };
        layers.push(layer);
    }
    let mut trailing = [0u8; 1];
    if r.0.read(&mut trailing)? != 0 {
        return Err(bad("trailing bytes after payload".into()));
    }
    let model = PackedModel { input_dims, layers };
    model.validate()?;
    Ok(model)
}

impl PackedModel {
    fn validate(&self) -> Result<()> {
        let mut dims = self.input_dims.clone();
        for layer in &self.layers {
            let spec = match layer {
                PackedLayer::FpConv { weight, stride, padding } => {
                    let d = weight.dims();
                    if d.len() != 4 || d[2] != d[3] {
                        return Err(Error::BadCheckpoint(format!("conv weight {d:?}")));
                    }
                    LayerSpec::FpConv { c_in: d[1], c_out: d[0], kernel: d[2], stride: *stride, padding: *padding }
                }
                PackedLayer::BinaryConv { weight, stride, padding } => {
                    let [o, i, kh, _] = weight.dims();
                    LayerSpec::BinaryConv { c_in: i, c_out: o, kernel: kh, stride: *stride, padding: *padding }
                }
                PackedLayer::FpLinear { weight, bias } => {
                    let d = weight.dims();
                    if d.len() != 2 || bias.dims() != [d[0]] {
                        return Err(Error::BadCheckpoint(format!("linear weight {d:?}")));
                    }
                    LayerSpec::FpLinear { in_features: d[1], out_features: d[0] }
                }
                PackedLayer::BinaryLinear { weight } => {
                    let [o, i] = weight.dims();
                    LayerSpec::BinaryLinear { in_features: i, out_features: o }
                }
                PackedLayer::BatchNorm { state } => {
                    LayerSpec::BatchNorm { channels: state.channels(), eps: state.eps, momentum: state.momentum }
                }
                PackedLayer::Hardtanh => LayerSpec::Hardtanh,
                PackedLayer::MaxPool { size } => LayerSpec::MaxPool { size: *size },
                PackedLayer::Flatten => LayerSpec::Flatten,
            };
            dims = spec.output_dims(&dims).map_err(|e| Error::BadCheckpoint(e.to_string()))?;
        }
        Ok(())
    }
}

pub fn load_packed(path: &Path) -> Result<PackedModel> {
    read_packed(BufReader::new(File::open(path)?))
}
