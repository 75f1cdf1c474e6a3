use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::layer::{LayerDescriptor, Shape};
use super::shape::infer_shapes;
use super::variant_id::variant_id;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    Base0,
    BaseSeq,
    BaseRes18,
    Custom,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Base0" => Ok(Family::Base0),
            "BaseSeq" => Ok(Family::BaseSeq),
            "BaseRes18" => Ok(Family::BaseRes18),
            "Custom" => Ok(Family::Custom),
            _ => Err(Error::Config(format!(
                "unknown base family '{s}' (expected Base0, BaseSeq, BaseRes18)"
            ))),
        }
    }
}

/// Stage widths of the four residual stages.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FilterSchedule(pub [usize; 4]);

pub const SCHEDULE_NAMES: [&str; 4] = ["Res64to512", "Res512to64", "Res64", "Res512"];
const STAGE_WIDTHS: [usize; 4] = [64, 128, 256, 512];

impl FilterSchedule {
    pub const RES64TO512: FilterSchedule = FilterSchedule([64, 128, 256, 512]);
    pub const RES512TO64: FilterSchedule = FilterSchedule([512, 256, 128, 64]);
    pub const RES64: FilterSchedule = FilterSchedule([64, 64, 64, 64]);
    pub const RES512: FilterSchedule = FilterSchedule([512, 512, 512, 512]);

    pub fn new(widths: [usize; 4]) -> Result<Self> {
        if let Some(w) = widths.iter().find(|w| !STAGE_WIDTHS.contains(w)) {
            return Err(Error::Config(format!(
                "stage width {w} not in {STAGE_WIDTHS:?}"
            )));
        }
        Ok(FilterSchedule(widths))
    }

    pub fn named(name: &str) -> Result<Self> {
        match name {
            "Res64to512" => Ok(Self::RES64TO512),
            "Res512to64" => Ok(Self::RES512TO64),
            "Res64" => Ok(Self::RES64),
            "Res512" => Ok(Self::RES512),
            _ => Err(Error::Config(format!(
                "unknown filter schedule '{name}'; valid names: {}",
                SCHEDULE_NAMES.join(", ")
            ))),
        }
    }

    pub fn name(&self) -> String {
        SCHEDULE_NAMES
            .iter()
            .find(|n| Self::named(n).ok() == Some(*self))
            .map(|n| n.to_string())
            .unwrap_or_else(|| {
                let [a, b, c, d] = self.0;
                format!("Res({a},{b},{c},{d})")
            })
    }

    pub fn reversed(&self) -> Self {
        let mut w = self.0;
        w.reverse();
        FilterSchedule(w)
    }
}

/// A declarative model: family tag, ordered layers, canonical id and the
/// positions that mutation operators may touch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    pub variant_id: String,
    pub layers: Vec<LayerDescriptor>,
    pub mutable: Vec<bool>,
}

/// Mutable positions for a layer list: residual networks are fixed, every
/// other family may touch all layers except the Flatten plumbing.
pub fn default_mask(family: Family, layers: &[LayerDescriptor]) -> Vec<bool> {
    layers
        .iter()
        .map(|l| family != Family::BaseRes18 && !matches!(l, LayerDescriptor::Flatten))
        .collect()
}

impl ModelSpec {
    pub fn new(family: Family, layers: Vec<LayerDescriptor>) -> Self {
        let mutable = default_mask(family, &layers);
        ModelSpec {
            family,
            variant_id: variant_id(&layers),
            layers,
            mutable,
        }
    }

    /// Number of classes implied by the head, if there is one.
    pub fn num_classes(&self) -> Option<usize> {
        super::shape::head_index(&self.layers).map(|i| match self.layers[i] {
            LayerDescriptor::Dense { units } => units,
            _ => unreachable!(),
        })
    }

    pub fn validate(&self, input: Shape, num_classes: usize) -> Result<Vec<Shape>> {
        if self.mutable.len() != self.layers.len() {
            return Err(Error::Config(format!(
                "mutable mask has {} entries for {} layers",
                self.mutable.len(),
                self.layers.len()
            )));
        }
        let id = variant_id(&self.layers);
        if id != self.variant_id {
            return Err(Error::Config(format!(
                "stored variant id '{}' does not match layers ('{id}')",
                self.variant_id
            )));
        }
        infer_shapes(&self.layers, input, num_classes)
    }

    /// Canonical JSON of the layer list; the basis for deduplication.
    pub fn canonical_layers_json(&self) -> String {
        serde_json::to_string(&self.layers).expect("layer descriptors serialise")
    }

    pub fn layers_hash(&self) -> String {
        format!(
            "{:x}",
            Sha256::digest(self.canonical_layers_json().as_bytes())
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model spec serialises")
    }
}

fn check_classes(num_classes: usize) -> Result<()> {
    if num_classes < 2 {
        return Err(Error::Config(format!(
            "num_classes must be >= 2, got {num_classes}"
        )));
    }
    Ok(())
}

pub fn base0_layers(num_classes: usize) -> Vec<LayerDescriptor> {
    vec![
        LayerDescriptor::Flatten,
        LayerDescriptor::dense(num_classes),
        LayerDescriptor::softmax(),
    ]
}

pub const BASESEQ_CONV_FILTERS: usize = 32;
pub const BASESEQ_DROPOUT: f32 = 0.25;

pub fn base_seq_layers(num_classes: usize) -> Vec<LayerDescriptor> {
    vec![
        LayerDescriptor::conv(BASESEQ_CONV_FILTERS),
        LayerDescriptor::BatchNorm,
        LayerDescriptor::MaxPool,
        LayerDescriptor::dropout(BASESEQ_DROPOUT),
        LayerDescriptor::Flatten,
        LayerDescriptor::dense(num_classes),
        LayerDescriptor::softmax(),
    ]
}

pub fn res18_layers(schedule: FilterSchedule, num_classes: usize) -> Vec<LayerDescriptor> {
    let [s1, s2, s3, s4] = schedule.0;
    let stage = |filters, downsample| LayerDescriptor::ResStage {
        filters,
        blocks: 2,
        downsample,
    };
    vec![
        LayerDescriptor::conv(s1),
        LayerDescriptor::BatchNorm,
        LayerDescriptor::relu(),
        stage(s1, false),
        stage(s2, true),
        stage(s3, true),
        stage(s4, true),
        LayerDescriptor::GlobalAvgPool,
        LayerDescriptor::dense(num_classes),
        LayerDescriptor::softmax(),
    ]
}

/// Schedule of a layer list built by [`res18_layers`], if it is one.
pub fn res18_schedule(layers: &[LayerDescriptor]) -> Option<FilterSchedule> {
    let widths: Vec<usize> = layers
        .iter()
        .filter_map(|l| match l {
            LayerDescriptor::ResStage { filters, .. } => Some(*filters),
            _ => None,
        })
        .collect();
    let schedule = FilterSchedule::new(widths.try_into().ok()?).ok()?;
    let k = match layers.get(8)? {
        LayerDescriptor::Dense { units } => *units,
        _ => return None,
    };
    (res18_layers(schedule, k) == layers).then_some(schedule)
}

pub fn base0(num_classes: usize) -> Result<ModelSpec> {
    check_classes(num_classes)?;
    Ok(ModelSpec::new(Family::Base0, base0_layers(num_classes)))
}

pub fn base_seq(num_classes: usize) -> Result<ModelSpec> {
    check_classes(num_classes)?;
    Ok(ModelSpec::new(
        Family::BaseSeq,
        base_seq_layers(num_classes),
    ))
}

pub fn base_res18(schedule: FilterSchedule, num_classes: usize) -> Result<ModelSpec> {
    check_classes(num_classes)?;
    let schedule = FilterSchedule::new(schedule.0)?;
    Ok(ModelSpec::new(
        Family::BaseRes18,
        res18_layers(schedule, num_classes),
    ))
}

pub fn repeat_block_layers(
    n: usize,
    with_dropout: bool,
    num_classes: usize,
) -> Vec<LayerDescriptor> {
    let mut unit = vec![
        LayerDescriptor::conv(BASESEQ_CONV_FILTERS),
        LayerDescriptor::MaxPool,
        LayerDescriptor::UpSample,
    ];
    if with_dropout {
        unit.push(LayerDescriptor::dropout(BASESEQ_DROPOUT));
    }
    let mut layers: Vec<_> = std::iter::repeat(unit).take(n).flatten().collect();
    layers.extend(base0_layers(num_classes));
    layers
}
