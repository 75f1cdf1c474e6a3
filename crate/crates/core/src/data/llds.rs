//! Native subset container: a fixed binary header, label bytes, pixel bytes,
//! and a JSON sidecar next to it.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use super::subset::SubsetSpec;
use crate::error::{Error, Result};
use crate::fsutil;

pub const LLDS_MAGIC: &[u8; 4] = b"LLDS";
pub const LLDS_VERSION: u8 = 1;
const HEADER: usize = 14;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LldsSidecar {
    pub class_names: Vec<String>,
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<SubsetSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn encode_llds(d: &Dataset) -> Result<Vec<u8>> {
    let n = u32::try_from(d.len()).map_err(|_| Error::Data("too many images for LLDS".into()))?;
    let h = u16::try_from(d.height()).map_err(|_| Error::Data("image too tall for LLDS".into()))?;
    let w = u16::try_from(d.width()).map_err(|_| Error::Data("image too wide for LLDS".into()))?;
    let mut out = Vec::with_capacity(HEADER + d.len() + d.images().len());
    out.extend_from_slice(LLDS_MAGIC);
    out.push(LLDS_VERSION);
    out.extend_from_slice(&n.to_be_bytes());
    out.push(d.channels() as u8);
    out.extend_from_slice(&h.to_be_bytes());
    out.extend_from_slice(&w.to_be_bytes());
    out.extend_from_slice(d.labels());
    out.extend_from_slice(d.images());
    Ok(out)
}

/// Decodes the binary part; returns labels, pixels and `(C, H, W)`.
pub fn decode_llds(bytes: &[u8], file: &str) -> Result<(Vec<u8>, Vec<u8>, (usize, usize, usize))> {
    if bytes.len() < HEADER {
        return Err(Error::parse(
            file,
            bytes.len() as u64,
            format!("header needs {HEADER} bytes"),
        ));
    }
    if &bytes[..4] != LLDS_MAGIC {
        return Err(Error::parse(file, 0, "bad magic, expected \"LLDS\""));
    }
    if bytes[4] != LLDS_VERSION {
        return Err(Error::parse(
            file,
            4,
            format!("unsupported version {}", bytes[4]),
        ));
    }
    let n = u32::from_be_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let c = bytes[9] as usize;
    let h = u16::from_be_bytes(bytes[10..12].try_into().unwrap()) as usize;
    let w = u16::from_be_bytes(bytes[12..14].try_into().unwrap()) as usize;
    let want = HEADER + n + n * c * h * w;
    if bytes.len() != want {
        return Err(Error::parse(
            file,
            bytes.len().min(want) as u64,
            format!("expected {want} bytes, found {}", bytes.len()),
        ));
    }
    let labels = bytes[HEADER..HEADER + n].to_vec();
    let pixels = bytes[HEADER + n..].to_vec();
    Ok((labels, pixels, (c, h, w)))
}

/// Writes the container and its sidecar, each atomically.
pub fn write_llds(path: &Path, d: &Dataset, spec: Option<&SubsetSpec>) -> Result<()> {
    let sidecar = LldsSidecar {
        class_names: d.class_names.clone(),
        source: d.source.clone(),
        seed: spec.map(|s| s.seed),
        spec: spec.cloned(),
    };
    let json = serde_json::to_string_pretty(&sidecar)?;
    fsutil::write_atomic(path, &encode_llds(d)?)?;
    fsutil::write_atomic(&sidecar_path(path), json.as_bytes())
}

pub fn read_llds(path: &Path) -> Result<(Dataset, LldsSidecar)> {
    let file = path.display().to_string();
    let (labels, pixels, dims) = decode_llds(&fsutil::read(path)?, &file)?;
    let side = sidecar_path(path);
    let sidecar: LldsSidecar = serde_json::from_slice(&fsutil::read(&side)?)
        .map_err(|e| Error::parse(side.display().to_string(), 0, e.to_string()))?;
    let d = Dataset::new(
        pixels,
        labels,
        dims,
        sidecar.source.clone(),
        sidecar.class_names.clone(),
    )?;
    Ok((d, sidecar))
}
