//! CIFAR-10 binary format (`data_batch_*.bin`).
//!
//! Each record is 3073 bytes: one label byte in `0..=9`, then 1024 red,
//! 1024 green and 1024 blue bytes, each plane a row-major 32x32 image.
//! Records borrow from the input buffer; pixels are converted to `[0, 1]`
//! reals only when asked.

use std::path::Path;

use super::{DataError, Dataset};
use crate::tensor::Tensor;

pub const CIFAR10_PIXELS: usize = 3 * 32 * 32;
pub const CIFAR10_RECORD_LEN: usize = 1 + CIFAR10_PIXELS;
pub const CIFAR10_CLASSES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cifar10Record<'a> {
    pub label: u8,
    /// Planar RGB, `CIFAR10_PIXELS` bytes.
    pub pixels: &'a [u8],
}

impl Cifar10Record<'_> {
    /// Pixel `i` of the planar buffer scaled to `[0, 1]`.
    pub fn pixel(&self, i: usize) -> f64 {
        f64::from(self.pixels[i]) / 255.0
    }

    pub fn pixels_f64(&self) -> impl Iterator<Item = f64> + '_ {
        self.pixels.iter().map(|&p| f64::from(p) / 255.0)
    }

    pub fn write_to(&self, out: &mut Vec<u8>) {
        out.push(self.label);
        out.extend_from_slice(self.pixels);
    }
}

/// Iterator over the records of a buffer. A trailing partial record yields
/// a [`DataError::Truncated`] and ends iteration.
#[derive(Debug, Clone)]
pub struct Cifar10Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    done: bool,
}

impl<'a> Cifar10Reader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self {
            bytes,
            pos: 0,
            done: false,
        }
    }
}

impl<'a> Iterator for Cifar10Reader<'a> {
    type Item = Result<Cifar10Record<'a>, DataError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done || self.pos == self.bytes.len() {
            return None;
        }
        let start = self.pos;
        let rest = &self.bytes[start..];
        if rest.len() < CIFAR10_RECORD_LEN {
            self.done = true;
            return Some(Err(DataError::Truncated {
                offset: self.bytes.len(),
                record_start: start,
                record_len: CIFAR10_RECORD_LEN,
            }));
        }
        self.pos += CIFAR10_RECORD_LEN;
        let label = rest[0];
        if usize::from(label) >= CIFAR10_CLASSES {
            self.done = true;
            return Some(Err(DataError::CorruptLabel { offset: start, label }));
        }
        Some(Ok(Cifar10Record {
            label,
            pixels: &rest[1..CIFAR10_RECORD_LEN],
        }))
    }
}

/// Parses a whole buffer. The length is checked up front so a truncated
/// file fails before any record is decoded.
pub fn parse_cifar10_bin(bytes: &[u8]) -> Result<Vec<Cifar10Record<'_>>, DataError> {
    let tail = bytes.len() % CIFAR10_RECORD_LEN;
    if tail != 0 {
        return Err(DataError::Truncated {
            offset: bytes.len(),
            record_start: bytes.len() - tail,
            record_len: CIFAR10_RECORD_LEN,
        });
    }
    Cifar10Reader::new(bytes).collect()
}

pub fn write_cifar10_bin(records: &[Cifar10Record<'_>]) -> Vec<u8> {
    let mut out = Vec::with_capacity(records.len() * CIFAR10_RECORD_LEN);
    for r in records {
        r.write_to(&mut out);
    }
    out
}

/// Loads and concatenates CIFAR-10 binary files into a `[N, 3072]` dataset.
pub fn load_cifar10_dataset<P: AsRef<Path>>(paths: &[P]) -> Result<Dataset, DataError> {
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for path in paths {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
        for rec in parse_cifar10_bin(&bytes)? {
            labels.push(usize::from(rec.label));
            data.extend(rec.pixels_f64());
        }
    }
    if labels.is_empty() {
        return Err(DataError::InvalidParams("no CIFAR-10 records found".into()));
    }
    let n = labels.len();
    Dataset::new(Tensor::new(vec![n, CIFAR10_PIXELS], data)?, labels, CIFAR10_CLASSES)
}
