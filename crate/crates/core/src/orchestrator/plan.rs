use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::{
    build_subset, load_source, read_llds, Dataset, ImagePipeline, SourceKind, SubsetSpec,
};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::mutations::VariantGrid;
use crate::train::{PreparedData, TrainConfig};

pub const DEFAULT_RUNS_PER_VARIANT: usize = 3;

/// A dataset as the plan sees it.
#[derive(Clone, Debug)]
pub enum DataSource {
    /// The same subset for every run.
    Fixed(Dataset),
    /// A fresh draw from `full` per run, with seed `spec.seed + run_index`.
    Resample {
        full: Arc<Dataset>,
        spec: SubsetSpec,
    },
}

impl DataSource {
    pub fn id(&self) -> String {
        match self {
            DataSource::Fixed(d) => d.source.clone(),
            DataSource::Resample { spec, .. } => spec.name(),
        }
    }

    /// Per-sample dims and class count of the data this source yields.
    pub fn dims(&self) -> ((usize, usize, usize), usize) {
        match self {
            DataSource::Fixed(d) => (d.dims(), d.num_classes()),
            DataSource::Resample { full, .. } => (full.dims(), 2),
        }
    }

    pub fn resamples(&self) -> bool {
        matches!(self, DataSource::Resample { .. })
    }

    pub fn prepare(
        &self,
        pipeline: &ImagePipeline,
        train: &TrainConfig,
        run_index: u64,
    ) -> Result<PreparedData> {
        let split = train.split_config();
        match self {
            DataSource::Fixed(d) => PreparedData::new(d, pipeline, &split),
            DataSource::Resample { full, spec } => {
                let seed = spec.seed.wrapping_add(run_index);
                let sub = build_subset(
                    full,
                    &SubsetSpec {
                        seed,
                        ..spec.clone()
                    },
                )?;
                let mut p = PreparedData::new(&sub, pipeline, &split)?;
                p.dataset_id = spec.name();
                p.subset_seed = Some(seed);
                Ok(p)
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentPlan {
    pub grid: VariantGrid,
    pub datasets: Vec<DataSource>,
    pub pipeline: ImagePipeline,
    pub runs_per_variant: usize,
    pub train: TrainConfig,
    pub workers: usize,
}

impl ExperimentPlan {
    pub fn check(&self) -> Result<()> {
        if self.runs_per_variant == 0 {
            return Err(Error::Config("runs_per_variant must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if self.grid.is_empty() {
            return Err(Error::Config("the variant grid is empty".into()));
        }
        if self.datasets.is_empty() {
            return Err(Error::Config("the plan has no datasets".into()));
        }
        self.train.check()
    }
}

/// Redraw source for a plan dataset; the subset recipe comes from the LLDS sidecar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResampleFrom {
    pub source: SourceKind,
    pub dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DatasetRef {
    Path(PathBuf),
    Entry {
        path: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        resample_from: Option<ResampleFrom>,
    },
}

impl DatasetRef {
    pub fn path(&self) -> &Path {
        match self {
            DatasetRef::Path(p) | DatasetRef::Entry { path: p, .. } => p,
        }
    }

    pub fn load(&self) -> Result<DataSource> {
        let (d, sidecar) = read_llds(self.path())?;
        match self {
            DatasetRef::Entry {
                resample_from: Some(from),
                ..
            } => {
                let spec = sidecar.spec.ok_or_else(|| {
                    Error::Config(format!(
                        "{} has no subset recipe in its sidecar, so it cannot be resampled",
                        self.path().display()
                    ))
                })?;
                let full = load_source(from.source, &from.dir)?;
                Ok(DataSource::Resample {
                    full: Arc::new(full),
                    spec,
                })
            }
            _ => Ok(DataSource::Fixed(d)),
        }
    }
}

fn default_runs() -> usize {
    DEFAULT_RUNS_PER_VARIANT
}

fn default_workers() -> usize {
    1
}

/// On-disk plan; relative paths resolve against the plan file's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanFile {
    pub grid_path: PathBuf,
    pub datasets: Vec<DatasetRef>,
    #[serde(default)]
    pub pipeline: ImagePipeline,
    #[serde(default = "default_runs")]
    pub runs_per_variant: usize,
    #[serde(default)]
    pub train_config: TrainConfig,
    #[serde(default = "default_workers")]
    pub workers: usize,
}

impl PlanFile {
    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fsutil::read(path)?;
        let mut plan: PlanFile = serde_json::from_slice(&bytes)
            .map_err(|e| Error::parse(path.display().to_string(), 0, e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut plan.grid_path);
        for d in &mut plan.datasets {
            match d {
                DatasetRef::Path(p) => fix(p),
                DatasetRef::Entry {
                    path,
                    resample_from,
                } => {
                    fix(path);
                    if let Some(r) = resample_from {
                        fix(&mut r.dir);
                    }
                }
            }
        }
        Ok(plan)
    }

    pub fn into_plan(self) -> Result<ExperimentPlan> {
        let text = String::from_utf8(fsutil::read(&self.grid_path)?).map_err(|_| {
            Error::parse(
                self.grid_path.display().to_string(),
                0,
                "grid file is not UTF-8",
            )
        })?;
        let grid = VariantGrid::from_json(&text)?;
        let datasets = self
            .datasets
            .iter()
            .map(DatasetRef::load)
            .collect::<Result<Vec<_>>>()?;
        let plan = ExperimentPlan {
            grid,
            datasets,
            pipeline: self.pipeline,
            runs_per_variant: self.runs_per_variant,
            train: self.train_config,
            workers: self.workers,
        };
        plan.check()?;
        Ok(plan)
    }
}
