//! The IDX binary format used by the MNIST files.
//!
//! A file starts with two zero bytes, a type code (`0x08` for unsigned
//! bytes), and the number of dimensions; then one big-endian `u32` per
//! dimension, then the data in row-major order. Gzip-compressed files are
//! recognized by their magic bytes and inflated transparently.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use ndarray::Array2;
use rand::seq::index::sample;
use wloss::Dataset;

use crate::rng::cell_rng;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;
const UNSIGNED_BYTE: u8 = 0x08;

#[derive(Debug, thiserror::Error)]
pub enum IdxError {
    #[error("bad magic number {found:#010x}, expected {expected:#010x}")]
    Magic { expected: u32, found: u32 },
    #[error("truncated file: need {needed} bytes, found {found}")]
    Truncated { needed: usize, found: usize },
    #[error("{0}")]
    Mismatch(String),
    #[error("no file {0} (with or without .gz)")]
    Missing(PathBuf),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// An unsigned-byte IDX array.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

impl IdxArray {
    pub fn magic(&self) -> u32 {
        (UNSIGNED_BYTE as u32) << 8 | self.dims.len() as u32
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 4 * self.dims.len() + self.data.len());
        out.extend_from_slice(&self.magic().to_be_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_be_bytes());
        }
        out.extend_from_slice(&self.data);
        out
    }
}

/// Parses the magic number and dimensions, checking the magic against
/// `expected`. Returns the dimensions and the header length in bytes.
pub fn parse_header(bytes: &[u8], expected: u32) -> Result<(Vec<usize>, usize), IdxError> {
    if bytes.len() < 4 {
        return Err(IdxError::Truncated { needed: 4, found: bytes.len() });
    }
    let magic = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
    if magic != expected {
        return Err(IdxError::Magic { expected, found: magic });
    }
    let ndims = bytes[3] as usize;
    let header = 4 + 4 * ndims;
    if bytes.len() < header {
        return Err(IdxError::Truncated { needed: header, found: bytes.len() });
    }
    let dims =
        bytes[4..header].chunks_exact(4).map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as usize).collect();
    Ok((dims, header))
}

pub fn parse_idx(bytes: &[u8], expected: u32) -> Result<IdxArray, IdxError> {
    let (dims, header) = parse_header(bytes, expected)?;
    let len: usize = dims.iter().product();
    let needed = header + len;
    if bytes.len() < needed {
        return Err(IdxError::Truncated { needed, found: bytes.len() });
    }
    Ok(IdxArray { dims, data: bytes[header..needed].to_vec() })
}

/// Reads a file, inflating it first if it is gzip-compressed.
pub fn read_file(path: &Path) -> Result<Vec<u8>, IdxError> {
    let raw = fs::read(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..]).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

pub fn read_idx(path: &Path, expected: u32) -> Result<IdxArray, IdxError> {
    parse_idx(&read_file(path)?, expected)
}

pub fn write_idx(path: &Path, array: &IdxArray, gzip: bool) -> Result<(), IdxError> {
    let bytes = array.to_bytes();
    if gzip {
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(&bytes)?;
        fs::write(path, enc.finish()?)?;
    } else {
        fs::write(path, bytes)?;
    }
    Ok(())
}

/// `dir/name` or `dir/name.gz`, whichever exists.
pub fn locate(dir: &Path, name: &str) -> Result<PathBuf, IdxError> {
    let plain = dir.join(name);
    if plain.is_file() {
        return Ok(plain);
    }
    let gz = dir.join(format!("{name}.gz"));
    if gz.is_file() {
        return Ok(gz);
    }
    Err(IdxError::Missing(plain))
}

/// Images and labels of one split as parallel arrays.
#[derive(Debug, Clone)]
pub struct Digits {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
    pub labels: Vec<u8>,
}

impl Digits {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Pixels scaled to [0, 1], one flattened image per row, one-hot labels.
    pub fn to_dataset(&self, indices: &[usize]) -> Dataset {
        let d = self.rows * self.cols;
        let mut features = Array2::zeros((indices.len(), d));
        for (r, &i) in indices.iter().enumerate() {
            for (f, &p) in features.row_mut(r).iter_mut().zip(&self.pixels[i * d..(i + 1) * d]) {
                *f = p as f64 / 255.0;
            }
        }
        let classes: Vec<usize> = indices.iter().map(|&i| self.labels[i] as usize).collect();
        let names = (0..10).map(|k| k.to_string()).collect();
        Dataset::from_classes(features, &classes, 10)
            .and_then(|data| data.with_names(names))
            .expect("labels checked to lie in 0..10")
    }
}

/// Loads `{split}-images-idx3-ubyte` and `{split}-labels-idx1-ubyte` from
/// `dir`, where `split` is `train` or `t10k`.
pub fn load_digits(dir: &Path, split: &str) -> Result<Digits, IdxError> {
    let images = read_idx(&locate(dir, &format!("{split}-images-idx3-ubyte"))?, IMAGES_MAGIC)?;
    let labels = read_idx(&locate(dir, &format!("{split}-labels-idx1-ubyte"))?, LABELS_MAGIC)?;
    let (n, rows, cols) = (images.dims[0], images.dims[1], images.dims[2]);
    if labels.dims[0] != n {
        return Err(IdxError::Mismatch(format!("{n} images but {} labels", labels.dims[0])));
    }
    if let Some(bad) = labels.data.iter().find(|&&l| l > 9) {
        return Err(IdxError::Mismatch(format!("label {bad} outside 0..9")));
    }
    Ok(Digits { rows, cols, pixels: images.data, labels: labels.data })
}

/// A split as a dataset, cut to `limit` rows chosen by a seeded draw
/// without replacement. `None` keeps every row in file order.
pub fn load_mnist(dir: &Path, split: &str, limit: Option<usize>, seed: u64) -> Result<Dataset, IdxError> {
    let digits = load_digits(dir, split)?;
    let indices: Vec<usize> = match limit {
        Some(n) if n < digits.len() => {
            let stream = if split == "train" { 0 } else { 1 };
            sample(&mut cell_rng(seed, stream), digits.len(), n).into_vec()
        }
        _ => (0..digits.len()).collect(),
    };
    Ok(digits.to_dataset(&indices))
}
