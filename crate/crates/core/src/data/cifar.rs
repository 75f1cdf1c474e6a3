use std::path::{Path, PathBuf};

use super::dataset::{names, Dataset, CIFAR10_CLASSES};
use crate::error::{Error, Result};
use crate::fsutil;

pub const CIFAR_RECORD: usize = 3073;
const CIFAR_PIXELS: usize = 3072;

/// Parses concatenated CIFAR-10 binary records (label byte, then R, G, B planes).
pub fn parse_cifar(bytes: &[u8], file: &str) -> Result<(Vec<u8>, Vec<u8>)> {
    if bytes.len() % CIFAR_RECORD != 0 {
        let whole = bytes.len() / CIFAR_RECORD;
        return Err(Error::parse(
            file,
            (whole * CIFAR_RECORD) as u64,
            format!(
                "length {} is not a multiple of {CIFAR_RECORD}; expected {} or {} bytes",
                bytes.len(),
                whole * CIFAR_RECORD,
                (whole + 1) * CIFAR_RECORD
            ),
        ));
    }
    let n = bytes.len() / CIFAR_RECORD;
    let mut labels = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * CIFAR_PIXELS);
    for (i, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        if rec[0] > 9 {
            return Err(Error::parse(
                file,
                (i * CIFAR_RECORD) as u64,
                format!("label {} out of range", rec[0]),
            ));
        }
        labels.push(rec[0]);
        pixels.extend_from_slice(&rec[1..]);
    }
    Ok((labels, pixels))
}

pub fn encode_cifar(labels: &[u8], pixels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(labels.len() * CIFAR_RECORD);
    for (l, img) in labels.iter().zip(pixels.chunks_exact(CIFAR_PIXELS)) {
        out.push(*l);
        out.extend_from_slice(img);
    }
    out
}

pub fn load_cifar_bin(paths: &[PathBuf]) -> Result<Dataset> {
    if paths.is_empty() {
        return Err(Error::Data("no CIFAR batch files given".into()));
    }
    let mut labels = Vec::new();
    let mut pixels = Vec::new();
    for p in paths {
        let (l, px) = parse_cifar(&fsutil::read(p)?, &p.display().to_string())?;
        labels.extend(l);
        pixels.extend(px);
    }
    Dataset::new(
        pixels,
        labels,
        (3, 32, 32),
        "cifar10",
        names(&CIFAR10_CLASSES),
    )
}

/// `data_batch_1..5.bin` then `test_batch.bin`, whichever exist in `dir`.
pub fn cifar_batch_paths(dir: &Path) -> Vec<PathBuf> {
    (1..=5)
        .map(|i| format!("data_batch_{i}.bin"))
        .chain(std::iter::once("test_batch.bin".to_string()))
        .map(|f| dir.join(f))
        .filter(|p| p.exists())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_record_round_trip() {
        let pixels: Vec<u8> = (0..CIFAR_PIXELS).map(|i| (i % 251) as u8).collect();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("data_batch_1.bin");
        std::fs::write(&p, encode_cifar(&[5], &pixels)).unwrap();
        let d = load_cifar_bin(&cifar_batch_paths(dir.path())).unwrap();
        assert_eq!(d.dims(), (3, 32, 32));
        assert_eq!(d.labels(), &[5]);
        assert_eq!(d.images(), &pixels[..]);
        // R plane first: pixel (0,0) of G sits 1024 bytes in
        assert_eq!(d.image(0)[1024], (1024 % 251) as u8);
    }

    #[test]
    fn truncated_file_names_lengths() {
        let e = parse_cifar(&vec![0; CIFAR_RECORD + 10], "b")
            .unwrap_err()
            .to_string();
        assert!(
            e.contains("3083") && e.contains("3073") && e.contains("6146"),
            "{e}"
        );
    }
}
