use std::path::Path;

use super::dataset::{digit_classes, Dataset};
use crate::error::{Error, Result};
use crate::fsutil;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], offset: usize, file: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::parse(file, offset as u64, "truncated header"))
}

/// Parses an IDX image file into `(n, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8], file: &str) -> Result<(usize, usize, usize, Vec<u8>)> {
    let magic = be_u32(bytes, 0, file)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::parse(
            file,
            0,
            format!("bad magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        ));
    }
    let n = be_u32(bytes, 4, file)? as usize;
    let rows = be_u32(bytes, 8, file)? as usize;
    let cols = be_u32(bytes, 12, file)? as usize;
    let want = n * rows * cols;
    let payload = &bytes[16..];
    if payload.len() != want {
        return Err(Error::parse(
            file,
            (16 + payload.len().min(want)) as u64,
            format!("expected {want} pixel bytes, found {}", payload.len()),
        ));
    }
    Ok((n, rows, cols, payload.to_vec()))
}

pub fn parse_idx_labels(bytes: &[u8], file: &str) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0, file)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::parse(
            file,
            0,
            format!("bad magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        ));
    }
    let n = be_u32(bytes, 4, file)? as usize;
    let payload = &bytes[8..];
    if payload.len() != n {
        return Err(Error::parse(
            file,
            (8 + payload.len().min(n)) as u64,
            format!("expected {n} label bytes, found {}", payload.len()),
        ));
    }
    Ok(payload.to_vec())
}

pub fn encode_idx_images(n: usize, rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IDX_IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Loads one IDX image/label pair. Class names default to digits; callers
/// relabel for FashionMNIST.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let ip = images_path.display().to_string();
    let lp = labels_path.display().to_string();
    let (n, rows, cols, pixels) = parse_idx_images(&fsutil::read(images_path)?, &ip)?;
    let labels = parse_idx_labels(&fsutil::read(labels_path)?, &lp)?;
    if labels.len() != n {
        return Err(Error::parse(
            lp,
            4,
            format!(
                "label count {} does not match image count {n}",
                labels.len()
            ),
        ));
    }
    let max = labels.iter().copied().max().unwrap_or(0);
    let mut classes = digit_classes();
    if max as usize >= classes.len() {
        classes = (0..=max).map(|i| i.to_string()).collect();
    }
    Dataset::new(pixels, labels, (1, rows, cols), ip, classes)
}

/// Loads the standard `train-*` and `t10k-*` files in `dir`, concatenated in
/// that order; either half may be absent.
pub fn load_idx_dir(dir: &Path, source: &str, class_names: Vec<String>) -> Result<Dataset> {
    let mut out: Option<Dataset> = None;
    for prefix in ["train", "t10k"] {
        let images = dir.join(format!("{prefix}-images-idx3-ubyte"));
        let labels = dir.join(format!("{prefix}-labels-idx1-ubyte"));
        if !images.exists() {
            continue;
        }
        let d = load_idx(&images, &labels)?;
        let labels = d.labels().to_vec();
        let d = d.with_labels(labels, class_names.clone())?;
        out = Some(match out {
            Some(acc) => acc.concat(&d)?,
            None => d,
        });
    }
    let mut d = out.ok_or_else(|| {
        Error::Data(format!(
            "no train-images-idx3-ubyte or t10k-images-idx3-ubyte in {}",
            dir.display()
        ))
    })?;
    d.source = source.to_string();
    Ok(d)
}
