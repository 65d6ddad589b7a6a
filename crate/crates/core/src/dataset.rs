//! MNIST in the IDX container format.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;

pub const IMAGE_MAGIC: u32 = 2051;
pub const LABEL_MAGIC: u32 = 2049;
pub const IMAGE_PIXELS: usize = 28 * 28;
pub const NUM_CLASSES: usize = 10;

/// Decoded IDX file: the raw magic, the declared dimensions and a `u8` payload.
#[derive(Clone, Debug, PartialEq)]
pub struct IdxTensor {
    pub magic: u32,
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

/// Parses an (uncompressed) IDX byte stream holding unsigned bytes.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxTensor> {
    if bytes.len() < 4 {
        return Err(Error::format("IDX header shorter than 4 bytes"));
    }
    let magic = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(Error::format(format!("bad IDX magic {magic:#010x}")));
    }
    if bytes[2] != 0x08 {
        return Err(Error::format(format!(
            "IDX element type {:#04x} is not unsigned byte",
            bytes[2]
        )));
    }
    let ndim = bytes[3] as usize;
    if ndim == 0 {
        return Err(Error::format("IDX file declares zero dimensions"));
    }
    let header = 4 + 4 * ndim;
    if bytes.len() < header {
        return Err(Error::format(format!(
            "IDX header needs {header} bytes, file has {}",
            bytes.len()
        )));
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let expected = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::format("IDX dimensions overflow"))?;
    let payload = &bytes[header..];
    if payload.len() != expected {
        return Err(Error::format(format!(
            "IDX dims {dims:?} need {expected} payload bytes, found {}",
            payload.len()
        )));
    }
    Ok(IdxTensor {
        magic,
        dims,
        data: payload.to_vec(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MnistSplit {
    /// `N x 784`, pixels scaled into `[0, 1]`.
    pub images: DenseMatrix,
    pub labels: Vec<usize>,
}

impl MnistSplit {
    pub fn new(images: DenseMatrix, labels: Vec<usize>) -> Result<Self> {
        if images.rows() != labels.len() {
            return Err(Error::shape(
                "MnistSplit::new",
                format!("{} images vs {} labels", images.rows(), labels.len()),
            ));
        }
        Ok(MnistSplit { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn select(&self, indices: &[usize]) -> MnistSplit {
        MnistSplit {
            images: self.images.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    fn from_idx(images: IdxTensor, labels: IdxTensor) -> Result<Self> {
        if images.magic != IMAGE_MAGIC || images.dims.len() != 3 {
            return Err(Error::format(format!(
                "expected image magic {IMAGE_MAGIC} with 3 dims, got {} with {:?}",
                images.magic, images.dims
            )));
        }
        if labels.magic != LABEL_MAGIC || labels.dims.len() != 1 {
            return Err(Error::format(format!(
                "expected label magic {LABEL_MAGIC} with 1 dim, got {} with {:?}",
                labels.magic, labels.dims
            )));
        }
        let (n, h, w) = (images.dims[0], images.dims[1], images.dims[2]);
        if n != labels.dims[0] {
            return Err(Error::format(format!("{n} images but {} labels", labels.dims[0])));
        }
        if let Some(&bad) = labels.data.iter().find(|&&l| l as usize >= NUM_CLASSES) {
            return Err(Error::format(format!("label {bad} out of range")));
        }
        let pixels = images.data.iter().map(|&p| p as f32 / 255.0).collect();
        MnistSplit::new(
            DenseMatrix::from_vec(n, h * w, pixels)?,
            labels.data.iter().map(|&l| l as usize).collect(),
        )
    }
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn find_idx_file(dir: &Path, stem: &str) -> Result<PathBuf> {
    // Both the original `-idx3-ubyte` names and the `.idx3-ubyte` variants some mirrors use.
    let dotted = stem.replacen("-idx", ".idx", 1);
    for base in [stem, dotted.as_str()] {
        for ext in ["", ".gz"] {
            let candidate = dir.join(format!("{base}{ext}"));
            if candidate.is_file() {
                return Ok(candidate);
            }
        }
    }
    Err(Error::input(format!(
        "missing MNIST file {stem}[.gz] in {}",
        dir.display()
    )))
}

fn load_split(dir: &Path, prefix: &str) -> Result<MnistSplit> {
    let images = find_idx_file(dir, &format!("{prefix}-images-idx3-ubyte"))?;
    let labels = find_idx_file(dir, &format!("{prefix}-labels-idx1-ubyte"))?;
    MnistSplit::from_idx(
        parse_idx(&read_maybe_gz(&images)?)?,
        parse_idx(&read_maybe_gz(&labels)?)?,
    )
}

/// Loads `(train, test)` from the four standard files in `dir`.
pub fn load_mnist(dir: impl AsRef<Path>) -> Result<(MnistSplit, MnistSplit)> {
    let dir = dir.as_ref();
    Ok((load_split(dir, "train")?, load_split(dir, "t10k")?))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SubsetSpec {
    pub fraction: f64,
    pub seed: u64,
}

impl SubsetSpec {
    pub fn new(fraction: f64, seed: u64) -> Result<Self> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::input(format!("subset fraction must be in (0, 1], got {fraction}")));
        }
        Ok(SubsetSpec { fraction, seed })
    }

    pub fn full(seed: u64) -> Self {
        SubsetSpec { fraction: 1.0, seed }
    }

    pub fn size_of(&self, n: usize) -> usize {
        (self.fraction * n as f64).round() as usize
    }
}

/// Row indices of a seeded uniform sample without replacement, in shuffled order.
pub fn subset_indices(n: usize, spec: &SubsetSpec) -> Result<Vec<usize>> {
    if !(spec.fraction > 0.0 && spec.fraction <= 1.0) {
        return Err(Error::input(format!(
            "subset fraction must be in (0, 1], got {}",
            spec.fraction
        )));
    }
    let amount = spec.size_of(n);
    if amount == 0 {
        return Err(Error::input(format!(
            "fraction {} of {n} rows selects nothing",
            spec.fraction
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut picked = index::sample(&mut rng, n, amount).into_vec();
    picked.shuffle(&mut rng);
    Ok(picked)
}

pub fn sample_subset(split: &MnistSplit, spec: &SubsetSpec) -> Result<MnistSplit> {
    Ok(split.select(&subset_indices(split.len(), spec)?))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub images: DenseMatrix,
    pub labels: Vec<usize>,
}

/// One pass over a split in fixed-size chunks. The last chunk may be short.
pub struct Batches<'a> {
    split: &'a MnistSplit,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl Iterator for Batches<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let idx = &self.order[self.pos..end];
        self.pos = end;
        Some(Batch {
            images: self.split.images.select_rows(idx),
            labels: idx.iter().map(|&i| self.split.labels[i]).collect(),
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.order.len() - self.pos).div_ceil(self.batch_size);
        (left, Some(left))
    }
}

impl ExactSizeIterator for Batches<'_> {}

/// Batches in row order (`shuffle_seed = None`) or in a seeded permutation.
pub fn batches(split: &MnistSplit, batch_size: usize, shuffle_seed: Option<u64>) -> Batches<'_> {
    assert!(batch_size >= 1, "batch_size must be >= 1");
    let mut order: Vec<usize> = (0..split.len()).collect();
    if let Some(seed) = shuffle_seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    Batches {
        split,
        order,
        batch_size,
        pos: 0,
    }
}
