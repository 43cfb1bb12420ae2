//! Datasets: IDX (MNIST layout) files, a synthetic two-class generator, and
//! deterministic shuffled batching.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::Prng;
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Images `[n, c, h, w]` with pixels in `[-1, 1]` and labels in `[0, classes)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if images.dims().len() != 4 {
            return Err(Error::IncompatibleShapes(format!("images must be [n,c,h,w], got {:?}", images.dims())));
        }
        if images.dims()[0] != labels.len() {
            return Err(Error::LabelCountMismatch { images: images.dims()[0], labels: labels.len() });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::BadLabel { label, classes });
        }
        if images.data().iter().any(|x| !(-1.0..=1.0).contains(x)) {
            return Err(Error::InvalidConfig("pixels must lie in [-1, 1]".into()));
        }
        Ok(Dataset { images, labels, classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-sample dims `[c, h, w]`.
    pub fn sample_dims(&self) -> [usize; 3] {
        let d = self.images.dims();
        [d[1], d[2], d[3]]
    }

    /// Images and labels for the given sample indices, in order.
    pub fn gather(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let per: usize = self.sample_dims().iter().product();
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            data.extend_from_slice(&self.images.data()[i * per..(i + 1) * per]);
        }
        let [c, h, w] = self.sample_dims();
        Ok((Tensor::new(&[indices.len(), c, h, w], data)?, indices.iter().map(|&i| self.labels[i]).collect()))
    }

    /// First `n` samples and the rest.
    pub fn split(&self, n: usize) -> Result<(Dataset, Dataset)> {
        if n > self.len() {
            return Err(Error::InvalidConfig(format!("cannot split {} samples at {n}", self.len())));
        }
        let head: Vec<usize> = (0..n).collect();
        let tail: Vec<usize> = (n..self.len()).collect();
        let (a, la) = self.gather(&head)?;
        let (b, lb) = self.gather(&tail)?;
        Ok((
            Dataset { images: a, labels: la, classes: self.classes },
            Dataset { images: b, labels: lb, classes: self.classes },
        ))
    }
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::TruncatedFile(format!("header field at byte {at}")))
}

fn parse_idx(bytes: &[u8], magic: u32) -> Result<(Vec<usize>, &[u8])> {
    let found = be_u32(bytes, 0)?;
    if found != magic {
        return Err(Error::BadIdxMagic(found));
    }
    let rank = (magic & 0xff) as usize;
    let dims = (0..rank).map(|i| be_u32(bytes, 4 + 4 * i).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    let start = 4 + 4 * rank;
    let len: usize = dims.iter().product();
    let payload = bytes.get(start..start + len).ok_or_else(|| Error::TruncatedFile(format!("payload of {len} bytes")))?;
    Ok((dims, payload))
}

/// Parses an image file (`0x00000803`, `[n, h, w]` uint8) and a label file
/// (`0x00000801`, `[n]` uint8). Pixels map to `x/127.5 − 1`.
pub fn parse_idx_pair(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let (idims, pixels) = parse_idx(images, IDX_IMAGES_MAGIC)?;
    let (ldims, raw_labels) = parse_idx(labels, IDX_LABELS_MAGIC)?;
    if idims[0] != ldims[0] {
        return Err(Error::LabelCountMismatch { images: idims[0], labels: ldims[0] });
    }
    let data = pixels.iter().map(|&p| (p as f64 / 127.5 - 1.0) as f32).collect();
    let images = Tensor::new(&[idims[0], 1, idims[1], idims[2]], data)?;
    let labels: Vec<usize> = raw_labels.iter().map(|&l| l as usize).collect();
    let classes = labels.iter().max().map_or(0, |&m| m + 1).max(10);
    Dataset::new(images, labels, classes)
}

pub fn load_idx(image_path: &Path, label_path: &Path) -> Result<Dataset> {
    parse_idx_pair(&fs::read(image_path)?, &fs::read(label_path)?)
}

/// Inverse of [`parse_idx_pair`] for single-channel datasets; pixels are
/// mapped back with `round((x + 1)·127.5)`.
pub fn encode_idx(d: &Dataset) -> Result<(Vec<u8>, Vec<u8>)> {
    let [c, h, w] = d.sample_dims();
    if c != 1 {
        return Err(Error::IncompatibleShapes(format!("IDX images are single channel, got {c}")));
    }
    if d.labels.iter().any(|&l| l > 255) {
        return Err(Error::InvalidConfig("IDX labels must fit in a byte".into()));
    }
    let mut images = Vec::with_capacity(16 + d.images.len());
    images.extend(IDX_IMAGES_MAGIC.to_be_bytes());
    for dim in [d.len(), h, w] {
        images.extend((dim as u32).to_be_bytes());
    }
    images.extend(d.images.data().iter().map(|&x| ((x as f64 + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8));
    let mut labels = Vec::with_capacity(8 + d.len());
    labels.extend(IDX_LABELS_MAGIC.to_be_bytes());
    labels.extend((d.len() as u32).to_be_bytes());
    labels.extend(d.labels.iter().map(|&l| l as u8));
    Ok((images, labels))
}

pub fn write_idx(d: &Dataset, image_path: &Path, label_path: &Path) -> Result<()> {
    let (images, labels) = encode_idx(d)?;
    fs::write(image_path, images)?;
    fs::write(label_path, labels)?;
    Ok(())
}

const SYNTH_SIDE: usize = 8;
const SYNTH_BRIGHT: f64 = 0.6;
const SYNTH_NOISE: f64 = 0.4;

/// Two-class `1×8×8` images: sample `i` has label `i mod 2`; class 0 has a
/// bright left half, class 1 a bright right half (±0.6 plus Gaussian noise
/// of standard deviation 0.4, clamped to `[-1, 1]`).
pub fn synth_dataset(n: usize, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::InvalidConfig(format!("synthetic dataset needs n >= 2, got {n}")));
    }
    let mut rng = Prng::new(seed);
    let mut data = Vec::with_capacity(n * SYNTH_SIDE * SYNTH_SIDE);
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    for &label in &labels {
        for _ in 0..SYNTH_SIDE {
            for x in 0..SYNTH_SIDE {
                let left = x < SYNTH_SIDE / 2;
                let base = if left == (label == 0) { SYNTH_BRIGHT } else { -SYNTH_BRIGHT };
                data.push((base + SYNTH_NOISE * rng.normal()).clamp(-1.0, 1.0) as f32);
            }
        }
    }
    Dataset::new(Tensor::new(&[n, 1, SYNTH_SIDE, SYNTH_SIDE], data)?, labels, 2)
}

/// Index batches of a Fisher–Yates permutation keyed on `(seed, epoch)`;
/// the final short batch is kept.
pub fn batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::InvalidConfig("batch size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = Prng::derive(seed, epoch as u64);
    for i in (1..n).rev() {
        let j = rng.below(i as u64 + 1) as usize;
        order.swap(i, j);
    }
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_pair(pixels: &[u8], labels: &[u8], h: u32, w: u32) -> (Vec<u8>, Vec<u8>) {
        let n = labels.len() as u32;
        let mut img = IDX_IMAGES_MAGIC.to_be_bytes().to_vec();
        for d in [n, h, w] {
            img.extend(d.to_be_bytes());
        }
        img.extend(pixels);
        let mut lab = IDX_LABELS_MAGIC.to_be_bytes().to_vec();
        lab.extend(n.to_be_bytes());
        lab.extend(labels);
        (img, lab)
    }

    #[test]
    fn idx_endpoints() {
        let (img, lab) = idx_pair(&[0, 255, 0, 255, 255, 0, 255, 0], &[3, 7], 2, 2);
        let d = parse_idx_pair(&img, &lab).unwrap();
        assert_eq!(d.images.dims(), &[2, 1, 2, 2]);
        assert_eq!(&d.images.data()[..2], &[-1.0, 1.0]);
        assert_eq!(d.labels, vec![3, 7]);
    }

    #[test]
    fn idx_guards() {
        let (mut img, lab) = idx_pair(&[0; 8], &[1, 2], 2, 2);
        img[3] = 0x04;
        assert_eq!(parse_idx_pair(&img, &lab).unwrap_err().code(), "bad-idx-magic");
        let (mut img, lab) = idx_pair(&[0; 8], &[1, 2], 2, 2);
        img.pop();
        assert_eq!(parse_idx_pair(&img, &lab).unwrap_err().code(), "truncated-file");
        let (img, _) = idx_pair(&[0; 8], &[1, 2], 2, 2);
        let (_, lab) = idx_pair(&[0; 4], &[1], 2, 2);
        assert_eq!(parse_idx_pair(&img, &lab).unwrap_err().code(), "label-count-mismatch");
    }

    #[test]
    fn synth_is_deterministic_and_balanced() {
        let a = synth_dataset(100, 42).unwrap();
        assert_eq!(a, synth_dataset(100, 42).unwrap());
        assert_eq!(a.labels.iter().filter(|&&l| l == 0).count(), 50);
        assert_ne!(a, synth_dataset(100, 43).unwrap());
    }

    #[test]
    fn batch_examples() {
        let b = batches(10, 4, 1, 0).unwrap();
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(b, batches(10, 4, 1, 0).unwrap());
        assert_ne!(b, batches(10, 4, 1, 1).unwrap());
        assert_eq!(batches(10, 10, 1, 0).unwrap().len(), 1);
    }
}
