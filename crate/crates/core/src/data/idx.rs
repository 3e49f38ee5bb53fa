//! IDX image/label files (big-endian header, unsigned byte payload).

use std::fs;
use std::path::Path;

use super::LabeledDataset;
use crate::error::{Error, IdxError, Result};
use crate::numcore::Matrix;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn read_u32(bytes: &[u8], at: usize, file: &'static str) -> Result<u32, IdxError> {
    match bytes.get(at..at + 4) {
        Some(b) => Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]])),
        None => Err(IdxError::Truncated {
            file,
            expected: at + 4,
            found: bytes.len(),
        }),
    }
}

fn check_magic(bytes: &[u8], expected: u32, file: &'static str) -> Result<(), IdxError> {
    let found = read_u32(bytes, 0, file)?;
    if found != expected {
        return Err(IdxError::BadMagic { file, expected, found });
    }
    Ok(())
}

fn payload<'a>(bytes: &'a [u8], header: usize, len: usize, file: &'static str) -> Result<&'a [u8], IdxError> {
    let expected = header + len;
    if bytes.len() < expected {
        return Err(IdxError::Truncated {
            file,
            expected,
            found: bytes.len(),
        });
    }
    Ok(&bytes[header..expected])
}

/// Parses in-memory image and label files. Pixels are scaled by 1/255.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<LabeledDataset> {
    check_magic(images, IMAGE_MAGIC, "images")?;
    check_magic(labels, LABEL_MAGIC, "labels")?;
    let n = read_u32(images, 4, "images")? as usize;
    let rows = read_u32(images, 8, "images")? as usize;
    let cols = read_u32(images, 12, "images")? as usize;
    let n_labels = read_u32(labels, 4, "labels")? as usize;
    if n != n_labels {
        return Err(IdxError::CountMismatch { images: n, labels: n_labels }.into());
    }
    let d = rows * cols;
    let pixels = payload(images, 16, n * d, "images")?;
    let raw_labels = payload(labels, 8, n, "labels")?;
    let features = Matrix::new(n, d, pixels.iter().map(|&p| f64::from(p) / 255.0).collect())?;
    let truth: Vec<usize> = raw_labels.iter().map(|&l| usize::from(l)).collect();
    let num_classes = truth.iter().max().map_or(1, |m| m + 1).max(10);
    LabeledDataset::clean(features, truth, num_classes)
}

pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    let images = fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let labels = fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;
    parse_idx(&images, &labels)
}

pub fn encode_idx_images(n: usize, rows: usize, cols: usize, pixels: &[u8]) -> Result<Vec<u8>> {
    if pixels.len() != n * rows * cols {
        return Err(Error::DimensionMismatch {
            context: "encode_idx_images",
            expected: n * rows * cols,
            got: pixels.len(),
        });
    }
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGE_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    Ok(out)
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Writes a dataset back to IDX files. Features must be multiples of 1/255
/// in `[0, 1]` and labels must fit in a byte.
pub fn write_idx(
    ds: &LabeledDataset,
    rows: usize,
    cols: usize,
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<()> {
    let mut pixels = Vec::with_capacity(ds.len() * ds.dim());
    for &v in ds.features().data() {
        let p = (v * 255.0).round();
        if !(0.0..=255.0).contains(&p) || (p / 255.0 - v).abs() > 1e-12 {
            return Err(Error::invalid(format!("feature {v} is not a byte pixel")));
        }
        pixels.push(p as u8);
    }
    let labels = ds
        .labels()
        .iter()
        .map(|&l| u8::try_from(l).map_err(|_| Error::invalid(format!("label {l} does not fit a byte"))))
        .collect::<Result<Vec<_>>>()?;
    let images = encode_idx_images(ds.len(), rows, cols, &pixels)?;
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    fs::write(images_path, images).map_err(|e| Error::io(images_path, e))?;
    fs::write(labels_path, encode_idx_labels(&labels)).map_err(|e| Error::io(labels_path, e))?;
    Ok(())
}
