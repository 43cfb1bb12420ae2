//! `CBNN` checkpoint files.
//!
//! ```text
//! "CBNN" | u32 version = 1
//! repeated until EOF:
//!   u16 name_len | name (UTF-8) | u8 rank | rank × u64 dims | f32 payload
//! ```
//!
//! All integers and floats are little-endian. Latent weights are stored;
//! binarization is re-derived on load. The first record, `arch`, is a rank-1
//! float tensor describing the layer stack (see [`encode_arch`]) so that a
//! checkpoint is self-contained.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use super::network::{LayerSpec, Network};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"CBNN";
pub const VERSION: u32 = 1;
pub const ARCH_RECORD: &str = "arch";
const ARCH_VERSION: f32 = 1.0;

/// Network architecture as stored in a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub input_dims: Vec<usize>,
    pub binarize_first_last: bool,
    pub layers: Vec<LayerSpec>,
}

impl Architecture {
    pub fn of(net: &Network, binarize_first_last: bool) -> Self {
        Architecture { input_dims: net.input_dims().to_vec(), binarize_first_last, layers: net.specs() }
    }
}

fn layer_code(spec: &LayerSpec) -> [f32; 6] {
    let u = |v: usize| v as f32;
    match *spec {
        LayerSpec::FpConv { c_in, c_out, kernel, stride, padding } => {
            [0.0, u(c_in), u(c_out), u(kernel), u(stride), u(padding)]
        }
        LayerSpec::BinaryConv { c_in, c_out, kernel, stride, padding } => {
            [1.0, u(c_in), u(c_out), u(kernel), u(stride), u(padding)]
        }
        LayerSpec::FpLinear { in_features, out_features } => [2.0, u(in_features), u(out_features), 0.0, 0.0, 0.0],
        LayerSpec::BinaryLinear { in_features, out_features } => {
            [3.0, u(in_features), u(out_features), 0.0, 0.0, 0.0]
        }
        LayerSpec::BatchNorm { channels, eps, momentum } => [4.0, u(channels), eps, momentum, 0.0, 0.0],
        LayerSpec::Hardtanh => [5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        LayerSpec::MaxPool { size } => [6.0, u(size), 0.0, 0.0, 0.0, 0.0],
        LayerSpec::Flatten => [7.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    }
}

fn layer_decode(code: &[f32]) -> Result<LayerSpec> {
    let bad = || Error::BadCheckpoint(format!("bad layer code {code:?}"));
    let u = |i: usize| -> Result<usize> {
        let v = code[i];
        if v >= 0.0 && v.fract() == 0.0 && v < 16_777_216.0 {
            Ok(v as usize)
        } else {
            Err(bad())
        }
    };
    Ok(match u(0)? {
        0 => LayerSpec::FpConv { c_in: u(1)?, c_out: u(2)?, kernel: u(3)?, stride: u(4)?, padding: u(5)? },
        1 => LayerSpec::BinaryConv { c_in: u(1)?, c_out: u(2)?, kernel: u(3)?, stride: u(4)?, padding: u(5)? },
        2 => LayerSpec::FpLinear { in_features: u(1)?, out_features: u(2)? },
        3 => LayerSpec::BinaryLinear { in_features: u(1)?, out_features: u(2)? },
        4 => LayerSpec::BatchNorm { channels: u(1)?, eps: code[2], momentum: code[3] },
        5 => LayerSpec::Hardtanh,
        6 => LayerSpec::MaxPool { size: u(1)? },
        7 => LayerSpec::Flatten,
        _ => return Err(bad()),
    })
}

/// `[1, input_rank, input_dims.., binarize_first_last, layer_count, 6 × layer_count codes]`.
pub fn encode_arch(arch: &Architecture) -> Tensor {
    let mut v = vec![ARCH_VERSION, arch.input_dims.len() as f32];
    v.extend(arch.input_dims.iter().map(|&d| d as f32));
    v.push(if arch.binarize_first_last { 1.0 } else { 0.0 });
    v.push(arch.layers.len() as f32);
    for spec in &arch.layers {
        v.extend(layer_code(spec));
    }
    let n = v.len();
    Tensor::new(&[n], v).expect("finite codes")
}

pub fn decode_arch(t: &Tensor) -> Result<Architecture> {
    let v = t.data();
    let bad = |what: &str| Error::BadCheckpoint(format!("malformed arch record: {what}"));
    if t.dims().len() != 1 || v.len() < 4 || v[0] != ARCH_VERSION {
        return Err(bad("header"));
    }
    let rank = v[1] as usize;
    if v.len() < 4 + rank {
        return Err(bad("input dims"));
    }
    let input_dims = v[2..2 + rank].iter().map(|&d| d as usize).collect();
    let binarize_first_last = v[2 + rank] != 0.0;
    let count = v[3 + rank] as usize;
    let codes = &v[4 + rank..];
    if codes.len() != count * 6 {
        return Err(bad("layer table length"));
    }
    let layers = codes.chunks_exact(6).map(layer_decode).collect::<Result<_>>()?;
    Ok(Architecture { input_dims, binarize_first_last, layers })
}

pub fn write_records<W: Write>(mut out: W, records: &[(String, &Tensor)]) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    for (name, t) in records {
        let name_len = u16::try_from(name.len()).map_err(|_| Error::BadCheckpoint(format!("name too long: {name}")))?;
        let rank = u8::try_from(t.dims().len()).map_err(|_| Error::BadCheckpoint(format!("rank too high: {name}")))?;
        out.write_all(&name_len.to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&[rank])?;
        for &d in t.dims() {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        for &x in t.data() {
            out.write_all(&x.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

fn read_exact_or_eof<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<bool> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) if filled == 0 => return Ok(false),
            Ok(0) => return Err(Error::TruncatedFile(format!("{filled} of {} bytes", buf.len()))),
            Ok(n) => filled += n,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(true)
}

pub fn read_records<R: Read>(mut r: R) -> Result<Vec<(String, Tensor)>> {
    let mut magic = [0u8; 4];
    if !read_exact_or_eof(&mut r, &mut magic)? || &magic != MAGIC {
        return Err(Error::BadCheckpointMagic);
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(Error::BadCheckpoint(format!("unsupported version {version}")));
    }
    let mut records = Vec::new();
    let mut len_buf = [0u8; 2];
    while read_exact_or_eof(&mut r, &mut len_buf)? {
        let mut name = vec![0u8; u16::from_le_bytes(len_buf) as usize];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::BadCheckpoint("record name is not UTF-8".into()))?;
        let mut rank = [0u8; 1];
        r.read_exact(&mut rank)?;
        let mut dims = Vec::with_capacity(rank[0] as usize);
        let mut d = [0u8; 8];
        for _ in 0..rank[0] {
            r.read_exact(&mut d)?;
            dims.push(
                usize::try_from(u64::from_le_bytes(d)).map_err(|_| Error::BadCheckpoint(format!("{name}: dim overflow")))?,
            );
        }
        let numel = dims
            .iter()
            .try_fold(1usize, |acc, &x| acc.checked_mul(x))
            .filter(|&n| n <= 1 << 31)
            .ok_or_else(|| Error::BadCheckpoint(format!("{name}: tensor too large")))?;
        let mut payload = vec![0u8; numel * 4];
        r.read_exact(&mut payload)?;
        let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        let t = Tensor::new(&dims, data).map_err(|e| Error::BadCheckpoint(format!("{name}: {e}")))?;
        records.push((name, t));
    }
    Ok(records)
}

/// Serializes the architecture record followed by every state tensor.
pub fn write_checkpoint<W: Write>(out: W, net: &Network, binarize_first_last: bool) -> Result<()> {
    let arch = encode_arch(&Architecture::of(net, binarize_first_last));
    let mut records = vec![(ARCH_RECORD.to_string(), &arch)];
    records.extend(net.state());
    write_records(out, &records)
}

pub fn save_checkpoint(path: &Path, net: &Network, binarize_first_last: bool) -> Result<()> {
    write_checkpoint(BufWriter::new(File::create(path)?), net, binarize_first_last)
}

/// Copies named tensors into the network; every state tensor must be present
/// with matching shape and no extra records may remain.
pub fn load_state(net: &mut Network, records: &[(String, Tensor)]) -> Result<()> {
    let mut used = vec![false; records.len()];
    for (name, dst) in net.state_mut() {
        let idx = records
            .iter()
            .position(|(n, _)| *n == name)
            .ok_or_else(|| Error::CheckpointMismatch(format!("missing tensor {name}")))?;
        let src = &records[idx].1;
        if src.dims() != dst.dims() {
            return Err(Error::CheckpointMismatch(format!(
                "{name}: checkpoint {:?} vs model {:?}",
                src.dims(),
                dst.dims()
            )));
        }
        dst.data_mut().copy_from_slice(src.data());
        used[idx] = true;
    }
    if let Some(i) = used.iter().position(|&u| !u) {
        return Err(Error::CheckpointMismatch(format!("unexpected tensor {}", records[i].0)));
    }
    Ok(())
}

/// Rebuilds a network from a self-describing checkpoint stream.
pub fn read_checkpoint<R: Read>(r: R) -> Result<(Network, Architecture)> {
    let mut records = read_records(r)?;
    let pos = records
        .iter()
        .position(|(n, _)| n == ARCH_RECORD)
        .ok_or_else(|| Error::BadCheckpoint("missing arch record".into()))?;
    let (_, arch_t) = records.remove(pos);
    let arch = decode_arch(&arch_t)?;
    let mut net = Network::new(&arch.layers, &arch.input_dims, 0, arch.binarize_first_last)?;
    load_state(&mut net, &records)?;
    Ok((net, arch))
}

pub fn load_checkpoint(path: &Path) -> Result<(Network, Architecture)> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
