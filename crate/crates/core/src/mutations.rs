//! Architecture mutation operators and variant grids.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::model::{
    base0, base_res18, base_seq, head_index, repeat_block_layers, Family, FilterSchedule,
    LayerDescriptor, ModelSpec, Shape, SCHEDULE_NAMES,
};

/// Which layer pairs SaRe swaps.
#[derive(Clone, Debug, PartialEq)]
pub enum SareScope {
    /// Every pair of adjacent mutable positions.
    AdjacentPairs,
    Positions(usize, usize),
    /// Two layers named by their short tokens, e.g. `Conv` and `BN`.
    Kinds(String, String),
}

#[derive(Clone, Debug, PartialEq)]
pub enum MutationOp {
    PaP(LayerDescriptor),
    Lolo,
    SaRe(SareScope),
    /// `None` places all four named schedules.
    FilterPlacement(Option<FilterSchedule>),
    RepeatBlock {
        n: usize,
        with_dropout: bool,
    },
}

fn op_error(s: &str, why: &str) -> Error {
    Error::Config(format!("unknown mutation op '{s}': {why}"))
}

fn kind_token(name: &str) -> Option<&'static str> {
    Some(match name.to_ascii_lowercase().as_str() {
        "conv" => "Conv",
        "bn" | "batchnorm" => "BN",
        "pl" | "pool" | "maxpool" => "PL",
        "dropl" | "dropout" => "DropL",
        "fcl" | "dense" => "FCL",
        "al" | "softmax" => "AL",
        "relu" => "ReLU",
        "flatten" => "Flatten",
        "upsamp" | "upsample" => "UpSamp",
        "gap" => "GAP",
        _ => return None,
    })
}

impl FromStr for MutationOp {
    type Err = Error;

    /// Parses `lolo`, `pap:bn`, `pap:dense:16`, `pap:conv:32`, `pap:dropout:0.25`,
    /// `sare`, `sare:conv,bn`, `sare:0,1`, `filterplacement[:Res64]`,
    /// `repeat:3`, `repeat:7:dropout`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |p: &str| {
            p.parse::<usize>()
                .map_err(|_| op_error(s, "expected a positive integer"))
        };
        match parts.as_slice() {
            ["lolo"] => Ok(MutationOp::Lolo),
            ["sare"] => Ok(MutationOp::SaRe(SareScope::AdjacentPairs)),
            ["sare", pair] => {
                let (a, b) = pair
                    .split_once(',')
                    .ok_or_else(|| op_error(s, "expected sare:A,B"))?;
                if let (Ok(i), Ok(j)) = (a.parse(), b.parse()) {
                    return Ok(MutationOp::SaRe(SareScope::Positions(i, j)));
                }
                let a = kind_token(a).ok_or_else(|| op_error(s, "unknown layer kind"))?;
                let b = kind_token(b).ok_or_else(|| op_error(s, "unknown layer kind"))?;
                Ok(MutationOp::SaRe(SareScope::Kinds(a.into(), b.into())))
            }
            ["filterplacement"] => Ok(MutationOp::FilterPlacement(None)),
            ["filterplacement", name] => Ok(MutationOp::FilterPlacement(Some(
                FilterSchedule::named(name)?,
            ))),
            ["repeat", n] => Ok(MutationOp::RepeatBlock {
                n: num(n)?,
                with_dropout: false,
            }),
            ["repeat", n, "dropout"] => Ok(MutationOp::RepeatBlock {
                n: num(n)?,
                with_dropout: true,
            }),
            ["pap", kind, rest @ ..] => {
                let arg = rest.first().copied();
                let layer = match (kind.to_ascii_lowercase().as_str(), arg) {
                    ("bn" | "batchnorm", None) => LayerDescriptor::BatchNorm,
                    ("pl" | "pool" | "maxpool", None) => LayerDescriptor::MaxPool,
                    ("relu", None) => LayerDescriptor::relu(),
                    ("upsample" | "upsamp", None) => LayerDescriptor::UpSample,
                    ("dropout" | "dropl", None) => LayerDescriptor::dropout(0.25),
                    ("dropout" | "dropl", Some(r)) => LayerDescriptor::dropout(
                        r.parse().map_err(|_| op_error(s, "bad dropout rate"))?,
                    ),
                    ("conv", None) => LayerDescriptor::conv(32),
                    ("conv", Some(f)) => LayerDescriptor::conv(num(f)?),
                    ("dense" | "fcl", Some(u)) => LayerDescriptor::dense(num(u)?),
                    ("dense" | "fcl", None) => {
                        return Err(op_error(s, "pap:dense needs a unit count"))
                    }
                    _ => return Err(op_error(s, "unknown layer for pap")),
                };
                if rest.len() > 1 {
                    return Err(op_error(s, "too many fields"));
                }
                layer.check()?;
                Ok(MutationOp::PaP(layer))
            }
            _ => Err(op_error(
                s,
                "expected lolo, pap:LAYER, sare[:A,B], filterplacement, repeat:N[:dropout]",
            )),
        }
    }
}

impl fmt::Display for MutationOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MutationOp::Lolo => write!(f, "lolo"),
            MutationOp::SaRe(SareScope::AdjacentPairs) => write!(f, "sare"),
            MutationOp::SaRe(SareScope::Positions(i, j)) => write!(f, "sare:{i},{j}"),
            MutationOp::SaRe(SareScope::Kinds(a, b)) => write!(f, "sare:{a},{b}"),
            MutationOp::FilterPlacement(None) => write!(f, "filterplacement"),
            MutationOp::FilterPlacement(Some(s)) => write!(f, "filterplacement:{}", s.name()),
            MutationOp::RepeatBlock {
                n,
                with_dropout: false,
            } => write!(f, "repeat:{n}"),
            MutationOp::RepeatBlock {
                n,
                with_dropout: true,
            } => write!(f, "repeat:{n}:dropout"),
            MutationOp::PaP(l) => match *l {
                LayerDescriptor::Conv { filters, .. } => write!(f, "pap:conv:{filters}"),
                LayerDescriptor::Dense { units } => write!(f, "pap:dense:{units}"),
                LayerDescriptor::Dropout { rate } => write!(f, "pap:dropout:{rate}"),
                LayerDescriptor::BatchNorm => write!(f, "pap:bn"),
                LayerDescriptor::MaxPool => write!(f, "pap:pool"),
                LayerDescriptor::UpSample => write!(f, "pap:upsample"),
                _ => write!(f, "pap:relu"),
            },
        }
    }
}

impl Serialize for MutationOp {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MutationOp {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One grid row: a spec plus where it came from and whether it may be trained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridEntry {
    #[serde(flatten)]
    pub spec: ModelSpec,
    pub provenance: String,
    pub valid: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

/// Deduplicated variant list; the control comes first.
#[derive(Clone, Debug, PartialEq)]
pub struct VariantGrid {
    pub entries: Vec<GridEntry>,
    pub warnings: Vec<String>,
    seen: HashSet<String>,
}

/// Shape used for structural validation when generating grids.
pub const DEFAULT_GRID_INPUT: Shape = Shape::Spatial { c: 1, h: 28, w: 28 };

impl VariantGrid {
    pub fn with_control(base: &ModelSpec, input: Shape) -> Result<Self> {
        let k = base
            .num_classes()
            .ok_or_else(|| Error::Config("base spec has no classification head".into()))?;
        base.validate(input, k)?;
        let mut g = VariantGrid {
            entries: Vec::new(),
            warnings: Vec::new(),
            seen: HashSet::new(),
        };
        g.push(base.clone(), "control".into(), input, k);
        Ok(g)
    }

    pub fn control(&self) -> &GridEntry {
        &self.entries[0]
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn variant_ids(&self) -> Vec<&str> {
        self.entries
            .iter()
            .map(|e| e.spec.variant_id.as_str())
            .collect()
    }

    /// Adds `spec` unless an identical layer list is present; returns whether it was added.
    fn push(&mut self, spec: ModelSpec, provenance: String, input: Shape, k: usize) -> bool {
        if !self.seen.insert(spec.layers_hash()) {
            return false;
        }
        let (valid, reason) = match spec.validate(input, k) {
            Ok(_) => (true, None),
            Err(e) => (false, Some(e.to_string())),
        };
        self.entries.push(GridEntry {
            spec,
            provenance,
            valid,
            reason,
        });
        true
    }

    fn merge(&mut self, other: VariantGrid, input: Shape, k: usize) {
        self.warnings.extend(other.warnings);
        for e in other.entries.into_iter().skip(1) {
            self.push(e.spec, e.provenance, input, k);
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.entries).expect("grid serialises")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let entries: Vec<GridEntry> = serde_json::from_str(s)?;
        if entries.is_empty() {
            return Err(Error::Data("variant grid is empty".into()));
        }
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.spec.layers_hash()) {
                return Err(Error::Data(format!(
                    "duplicate variant '{}' in grid",
                    e.spec.variant_id
                )));
            }
            if crate::model::variant_id(&e.spec.layers) != e.spec.variant_id {
                return Err(Error::Data(format!(
                    "variant id '{}' does not match its layers",
                    e.spec.variant_id
                )));
            }
        }
        Ok(VariantGrid {
            entries,
            warnings: Vec::new(),
            seen,
        })
    }
}

fn derived(base: &ModelSpec, layers: Vec<LayerDescriptor>, mutable: Vec<bool>) -> ModelSpec {
    ModelSpec {
        family: base.family,
        variant_id: crate::model::variant_id(&layers),
        layers,
        mutable,
    }
}

fn classes(base: &ModelSpec) -> Result<usize> {
    base.num_classes()
        .ok_or_else(|| Error::Config("base spec has no classification head".into()))
}

/// Plug-and-play: `layer` inserted at every legal slot up to the head.
pub fn pap_insert(base: &ModelSpec, layer: &LayerDescriptor, input: Shape) -> Result<VariantGrid> {
    layer.check()?;
    let mut grid = VariantGrid::with_control(base, input)?;
    let k = classes(base)?;
    let head = head_index(&base.layers).expect("validated base has a head");
    let mut added = 0;
    if base.mutable.iter().any(|m| *m) {
        for slot in 0..=head {
            let mut layers = base.layers.clone();
            layers.insert(slot, layer.clone());
            let mut mask = base.mutable.clone();
            mask.insert(slot, true);
            let spec = derived(base, layers, mask);
            if spec.validate(input, k).is_ok()
                && grid.push(spec, format!("pap:{}@{slot}", layer.full_token()), input, k)
            {
                added += 1;
            }
        }
    }
    if added == 0 {
        let w = format!(
            "pap: no legal position for {} in {}",
            layer.full_token(),
            base.variant_id
        );
        warn!("{w}");
        grid.warnings.push(w);
    }
    Ok(grid)
}

/// Leave-one-layer-out over every mutable position; invalid removals stay in
/// the grid marked invalid.
pub fn lolo(base: &ModelSpec, input: Shape) -> Result<VariantGrid> {
    let mut grid = VariantGrid::with_control(base, input)?;
    let k = classes(base)?;
    for (i, _) in base.mutable.iter().enumerate().filter(|(_, m)| **m) {
        let mut layers = base.layers.clone();
        let removed = layers.remove(i);
        let mut mask = base.mutable.clone();
        mask.remove(i);
        let spec = derived(base, layers, mask);
        grid.push(
            spec,
            format!("lolo:{}@{i}", removed.short_token()),
            input,
            k,
        );
    }
    Ok(grid)
}

/// Swaps two positions, returning a new spec.
pub fn swap(base: &ModelSpec, i: usize, j: usize) -> Result<ModelSpec> {
    let n = base.layers.len();
    if i >= n || j >= n {
        return Err(Error::Config(format!(
            "sare positions ({i}, {j}) out of range for {n} layers"
        )));
    }
    let mut layers = base.layers.clone();
    layers.swap(i, j);
    let mut mask = base.mutable.clone();
    mask.swap(i, j);
    Ok(derived(base, layers, mask))
}

/// Select-and-reorder.
pub fn sare(base: &ModelSpec, scope: &SareScope, input: Shape) -> Result<VariantGrid> {
    let mut grid = VariantGrid::with_control(base, input)?;
    let k = classes(base)?;
    let pairs: Vec<(usize, usize)> = match scope {
        SareScope::AdjacentPairs => (0..base.layers.len().saturating_sub(1))
            .filter(|&i| base.mutable[i] && base.mutable[i + 1])
            .map(|i| (i, i + 1))
            .collect(),
        SareScope::Positions(i, j) => vec![(*i, *j)],
        SareScope::Kinds(a, b) => {
            let find = |t: &str| {
                let hits: Vec<usize> = base
                    .layers
                    .iter()
                    .enumerate()
                    .filter(|(i, l)| base.mutable[*i] && l.short_token() == t)
                    .map(|(i, _)| i)
                    .collect();
                match hits.as_slice() {
                    [i] => Ok(*i),
                    [] => Err(Error::Config(format!(
                        "sare: no mutable {t} layer in {}",
                        base.variant_id
                    ))),
                    _ => Err(Error::Config(format!(
                        "sare: {t} is ambiguous in {}",
                        base.variant_id
                    ))),
                }
            };
            vec![(find(a)?, find(b)?)]
        }
    };
    for (i, j) in pairs {
        let spec = swap(base, i, j)?;
        let prov = format!(
            "sare:{}@{i},{}@{j}",
            base.layers[i].short_token(),
            base.layers[j].short_token()
        );
        grid.push(spec, prov, input, k);
    }
    Ok(grid)
}

pub fn filter_placement(schedule_name: &str, num_classes: usize) -> Result<ModelSpec> {
    base_res18(FilterSchedule::named(schedule_name)?, num_classes)
}

pub fn repeat_block(n: usize, with_dropout: bool, num_classes: usize) -> Result<ModelSpec> {
    if n == 0 {
        return Err(Error::Config("repeat count must be >= 1".into()));
    }
    if num_classes < 2 {
        return Err(Error::Config(format!(
            "num_classes must be >= 2, got {num_classes}"
        )));
    }
    Ok(ModelSpec::new(
        Family::Custom,
        repeat_block_layers(n, with_dropout, num_classes),
    ))
}

/// JSON grid recipe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRecipe {
    pub base: String,
    #[serde(default)]
    pub ops: Vec<MutationOp>,
    pub num_classes: usize,
    /// Per-sample `[C, H, W]` used to validate candidates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<[usize; 3]>,
}

pub fn base_spec(name: &str, num_classes: usize) -> Result<ModelSpec> {
    match name.to_ascii_lowercase().as_str() {
        "base0" => base0(num_classes),
        "baseseq" => base_seq(num_classes),
        "baseres18" => base_res18(FilterSchedule::RES64TO512, num_classes),
        _ => Err(Error::Config(format!(
            "unknown base family '{name}' (expected base0, baseseq, baseres18)"
        ))),
    }
}

pub fn generate_grid(recipe: &GridRecipe) -> Result<VariantGrid> {
    let base = base_spec(&recipe.base, recipe.num_classes)?;
    let input = recipe
        .input
        .map(|[c, h, w]| Shape::spatial(c, h, w))
        .unwrap_or(DEFAULT_GRID_INPUT);
    let k = recipe.num_classes;
    let mut grid = VariantGrid::with_control(&base, input)?;
    for op in &recipe.ops {
        let sub = match op {
            MutationOp::PaP(layer) => pap_insert(&base, layer, input)?,
            MutationOp::Lolo => lolo(&base, input)?,
            MutationOp::SaRe(scope) => sare(&base, scope, input)?,
            MutationOp::FilterPlacement(which) => {
                let mut g = VariantGrid::with_control(&base, input)?;
                let names: Vec<String> = match which {
                    Some(s) => vec![s.name()],
                    None => SCHEDULE_NAMES.iter().map(|s| s.to_string()).collect(),
                };
                for name in names {
                    let spec = filter_placement(&name, k)?;
                    g.push(spec, format!("filterplacement:{name}"), input, k);
                }
                g
            }
            MutationOp::RepeatBlock { n, with_dropout } => {
                let mut g = VariantGrid::with_control(&base, input)?;
                g.push(
                    repeat_block(*n, *with_dropout, k)?,
                    op.to_string(),
                    input,
                    k,
                );
                g
            }
        };
        grid.merge(sub, input, k);
    }
    Ok(grid)
}
