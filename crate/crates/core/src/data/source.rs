use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::cifar::{cifar_batch_paths, load_cifar_bin};
use super::dataset::{digit_classes, names, Dataset, FMNIST_CLASSES};
use super::idx::load_idx_dir;
use super::llds::read_llds;
use crate::error::{Error, Result};

/// Where a full dataset comes from on disk.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceKind {
    MnistIdx,
    FmnistIdx,
    CifarBin,
    Llds,
}

impl SourceKind {
    /// Short dataset name used in subset ids.
    pub fn dataset_name(self) -> &'static str {
        match self {
            SourceKind::MnistIdx => "mnist",
            SourceKind::FmnistIdx => "fmnist",
            SourceKind::CifarBin => "cifar10",
            SourceKind::Llds => "llds",
        }
    }
}

impl FromStr for SourceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mnist-idx" => Ok(SourceKind::MnistIdx),
            "fmnist-idx" => Ok(SourceKind::FmnistIdx),
            "cifar-bin" => Ok(SourceKind::CifarBin),
            "llds" => Ok(SourceKind::Llds),
            _ => Err(Error::Config(format!(
                "unknown source '{s}' (expected mnist-idx, fmnist-idx, cifar-bin, llds)"
            ))),
        }
    }
}

impl fmt::Display for SourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SourceKind::MnistIdx => "mnist-idx",
            SourceKind::FmnistIdx => "fmnist-idx",
            SourceKind::CifarBin => "cifar-bin",
            SourceKind::Llds => "llds",
        })
    }
}

/// Loads a full dataset: a directory for IDX and CIFAR, a file for LLDS.
pub fn load_source(kind: SourceKind, path: &Path) -> Result<Dataset> {
    match kind {
        SourceKind::MnistIdx => load_idx_dir(path, "mnist", digit_classes()),
        SourceKind::FmnistIdx => load_idx_dir(path, "fmnist", names(&FMNIST_CLASSES)),
        SourceKind::CifarBin => {
            let paths = cifar_batch_paths(path);
            if paths.is_empty() {
                return Err(Error::Data(format!(
                    "no CIFAR-10 batch files in {}",
                    path.display()
                )));
            }
            load_cifar_bin(&paths)
        }
        SourceKind::Llds => read_llds(path).map(|(d, _)| d),
    }
}
