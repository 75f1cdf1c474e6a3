//! Canonical names for layer lists.
//!
//! Named bases map to their names ("Base0", "BaseSeq", "Res64to512"), single
//! edits of Base0/BaseSeq are named relative to the base ("BaseSeq(BN-Conv)",
//! "BaseSeq-Conv", "Base0+BN@1"), repeated blocks get "RepeatN(...)", and
//! everything else falls back to "Seq[...]" over full layer tokens.

use super::layer::LayerDescriptor;
use super::shape::head_index;
use super::spec::{
    base0_layers, base_seq_layers, default_mask, repeat_block_layers, res18_layers, res18_schedule,
    Family, FilterSchedule, ModelSpec,
};
use crate::error::{Error, Result};

type Base = (&'static str, Family, fn(usize) -> Vec<LayerDescriptor>);

const BASES: [Base; 2] = [
    ("BaseSeq", Family::BaseSeq, base_seq_layers),
    ("Base0", Family::Base0, base0_layers),
];

fn head_units(layers: &[LayerDescriptor]) -> Option<usize> {
    head_index(layers).map(|i| match layers[i] {
        LayerDescriptor::Dense { units } => units,
        _ => unreachable!(),
    })
}

fn join_short(layers: &[LayerDescriptor]) -> String {
    layers
        .iter()
        .map(|l| l.short_token())
        .collect::<Vec<_>>()
        .join("-")
}

fn repeat_pattern(with_dropout: bool) -> &'static str {
    if with_dropout {
        "Conv-PL-UpSamp-DropL"
    } else {
        "Conv-PL-UpSamp"
    }
}

/// Span `[a, b]` over which `layers` reorders `base`, if it is a reordering
/// of a contiguous window.
fn permuted_window(base: &[LayerDescriptor], layers: &[LayerDescriptor]) -> Option<(usize, usize)> {
    if base.len() != layers.len() {
        return None;
    }
    let a = (0..base.len()).find(|&i| base[i] != layers[i])?;
    let b = (0..base.len()).rfind(|&i| base[i] != layers[i])?;
    let mut used = vec![false; b - a + 1];
    for l in &layers[a..=b] {
        let j = (0..used.len()).find(|&j| !used[j] && base[a + j] == *l)?;
        used[j] = true;
    }
    Some((a, b))
}

fn relative_id(name: &str, base: &[LayerDescriptor], layers: &[LayerDescriptor]) -> Option<String> {
    if let Some((a, b)) = permuted_window(base, layers) {
        return Some(format!("{name}({})", join_short(&layers[a..=b])));
    }
    if layers.len() + 1 == base.len() {
        for i in 0..base.len() {
            let mut removed = base.to_vec();
            removed.remove(i);
            if removed == layers {
                return Some(format!("{name}-{}", base[i].short_token()));
            }
        }
    }
    if layers.len() == base.len() + 1 {
        for i in 0..layers.len() {
            let mut inserted = base.to_vec();
            inserted.insert(i, layers[i].clone());
            if inserted == layers {
                return Some(format!("{name}+{}@{i}", layers[i].full_token()));
            }
        }
    }
    None
}

/// The canonical id of a layer list. Pure: depends on nothing but `layers`.
pub fn variant_id(layers: &[LayerDescriptor]) -> String {
    if let Some(k) = head_units(layers) {
        if let Some(schedule) = res18_schedule(layers) {
            return schedule.name();
        }
        for (name, _, build) in BASES {
            let base = build(k);
            if base == layers {
                return name.to_string();
            }
        }
        for (name, _, build) in BASES {
            if let Some(id) = relative_id(name, &build(k), layers) {
                return id;
            }
        }
        for with_dropout in [false, true] {
            let period = if with_dropout { 4 } else { 3 };
            let body = layers.len().saturating_sub(3);
            let n = body / period;
            if n >= 1 && body % period == 0 && repeat_block_layers(n, with_dropout, k) == layers {
                return format!("Repeat{n}({})", repeat_pattern(with_dropout));
            }
        }
    } else {
        // without a head the only base relative is the head's removal, which
        // erases the class count
        for (name, _, build) in BASES {
            let base = build(2);
            if let Some(id) = relative_id(name, &base, layers).filter(|id| id.ends_with("-FCL")) {
                return id;
            }
        }
    }
    let tokens: Vec<String> = layers.iter().map(|l| l.full_token()).collect();
    format!("Seq[{}]", tokens.join("-"))
}

fn bad_id(id: &str, why: &str) -> Error {
    Error::Config(format!("cannot parse variant id '{id}': {why}"))
}

/// Layers for a relative id, given the base layer list.
fn parse_relative(id: &str, rest: &str, base: &[LayerDescriptor]) -> Result<Vec<LayerDescriptor>> {
    if let Some(inner) = rest.strip_prefix('(').and_then(|r| r.strip_suffix(')')) {
        let tokens: Vec<&str> = inner.split('-').collect();
        let len = tokens.len();
        for a in 0..=base.len().saturating_sub(len) {
            let window = &base[a..a + len];
            let mut used = vec![false; len];
            let mut reordered = Vec::with_capacity(len);
            for t in &tokens {
                match (0..len).find(|&j| !used[j] && window[j].short_token() == *t) {
                    Some(j) => {
                        used[j] = true;
                        reordered.push(window[j].clone());
                    }
                    None => break,
                }
            }
            if reordered.len() == len
                && reordered.first() != window.first()
                && reordered.last() != window.last()
            {
                let mut layers = base.to_vec();
                layers[a..a + len].clone_from_slice(&reordered);
                return Ok(layers);
            }
        }
        return Err(bad_id(
            id,
            "tokens are not a reordering of a window of the base",
        ));
    }
    if let Some(token) = rest.strip_prefix('-') {
        let i = base
            .iter()
            .position(|l| l.short_token() == token)
            .ok_or_else(|| bad_id(id, "removed layer not in base"))?;
        let mut layers = base.to_vec();
        layers.remove(i);
        return Ok(layers);
    }
    if let Some(edit) = rest.strip_prefix('+') {
        let (token, pos) = edit
            .rsplit_once('@')
            .ok_or_else(|| bad_id(id, "insertion lacks '@position'"))?;
        let pos: usize = pos
            .parse()
            .map_err(|_| bad_id(id, "bad insertion position"))?;
        if pos > base.len() {
            return Err(bad_id(id, "insertion position out of range"));
        }
        let mut layers = base.to_vec();
        layers.insert(pos, LayerDescriptor::parse_token(token)?);
        return Ok(layers);
    }
    Err(bad_id(id, "unrecognised suffix"))
}

/// Inverse of [`variant_id`]: rebuilds the spec a canonical id names.
pub fn parse_variant_id(id: &str, num_classes: usize) -> Result<ModelSpec> {
    let (family, layers) = if let Ok(schedule) = FilterSchedule::named(id) {
        (Family::BaseRes18, res18_layers(schedule, num_classes))
    } else if let Some(inner) = id.strip_prefix("Res(").and_then(|r| r.strip_suffix(')')) {
        let widths: Vec<usize> = inner
            .split(',')
            .map(|w| w.trim().parse().map_err(|_| bad_id(id, "bad stage width")))
            .collect::<Result<_>>()?;
        let widths: [usize; 4] = widths
            .try_into()
            .map_err(|_| bad_id(id, "expected four stage widths"))?;
        (
            Family::BaseRes18,
            res18_layers(FilterSchedule::new(widths)?, num_classes),
        )
    } else if let Some(inner) = id.strip_prefix("Seq[").and_then(|r| r.strip_suffix(']')) {
        let layers = inner
            .split('-')
            .map(LayerDescriptor::parse_token)
            .collect::<Result<Vec<_>>>()?;
        (Family::Custom, layers)
    } else if let Some(rest) = id.strip_prefix("Repeat") {
        let (n, pattern) = rest
            .split_once('(')
            .ok_or_else(|| bad_id(id, "expected RepeatN(pattern)"))?;
        let n: usize = n.parse().map_err(|_| bad_id(id, "bad repeat count"))?;
        let with_dropout = match pattern.strip_suffix(')') {
            Some(p) if p == repeat_pattern(false) => false,
            Some(p) if p == repeat_pattern(true) => true,
            _ => return Err(bad_id(id, "unknown repeat pattern")),
        };
        if n == 0 {
            return Err(bad_id(id, "repeat count must be >= 1"));
        }
        (
            Family::Custom,
            repeat_block_layers(n, with_dropout, num_classes),
        )
    } else {
        let (name, family, build) = BASES
            .iter()
            .find(|(name, ..)| {
                id.starts_with(name) && !id[name.len()..].starts_with(|c: char| c.is_alphanumeric())
            })
            .ok_or_else(|| bad_id(id, "unknown family prefix"))?;
        let base = build(num_classes);
        let rest = &id[name.len()..];
        let layers = if rest.is_empty() {
            base
        } else {
            parse_relative(id, rest, &base)?
        };
        (*family, layers)
    };
    let spec = ModelSpec {
        family,
        variant_id: variant_id(&layers),
        mutable: default_mask(family, &layers),
        layers,
    };
    if spec.variant_id != id {
        return Err(bad_id(
            id,
            &format!("it is not canonical (canonical form '{}')", spec.variant_id),
        ));
    }
    Ok(spec)
}
