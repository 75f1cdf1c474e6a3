use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, SplitTag};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub testsize: f64,
    pub randstate: u64,
    pub validationsplit: f64,
    pub stratify: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            testsize: 0.25,
            randstate: 42,
            validationsplit: 0.25,
            stratify: true,
        }
    }
}

impl SplitConfig {
    pub fn check(&self) -> Result<()> {
        for (name, v) in [
            ("testsize", self.testsize),
            ("validationsplit", self.validationsplit),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!("{name} must be in (0, 1), got {v}")));
            }
        }
        Ok(())
    }
}

/// Per-class held-out counts: `ceil(fraction·n)` in total, shared out by
/// largest remainder (ties to the lower class index).
pub fn stratified_counts(counts: &[usize], fraction: f64) -> Vec<usize> {
    let n: usize = counts.iter().sum();
    let total = (fraction * n as f64 - 1e-9).ceil().max(0.0) as usize;
    let exact: Vec<f64> = counts
        .iter()
        .map(|&c| total as f64 * c as f64 / n as f64)
        .collect();
    let mut alloc: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    let mut left = total - alloc.iter().sum::<usize>();
    for &c in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if alloc[c] < counts[c] {
            alloc[c] += 1;
            left -= 1;
        }
    }
    alloc
}

/// Splits `d` into `(kept, held_out)` with `fraction` held out, stratified by class.
pub fn stratified_split(
    d: &Dataset,
    fraction: f64,
    seed: u64,
    tags: (SplitTag, SplitTag),
) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!(
            "split fraction must be in (0, 1), got {fraction}"
        )));
    }
    let counts = d.class_counts();
    if let Some((c, &k)) = counts.iter().enumerate().find(|(_, &k)| k == 1) {
        return Err(Error::Data(format!(
            "class '{}' has {k} sample; stratified splitting needs at least 2",
            d.class_names[c]
        )));
    }
    let held = stratified_counts(&counts, fraction);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kept_idx = Vec::new();
    let mut held_idx = Vec::new();
    for (c, &h) in held.iter().enumerate() {
        let mut idx: Vec<usize> = (0..d.len())
            .filter(|&i| d.labels()[i] as usize == c)
            .collect();
        idx.shuffle(&mut rng);
        held_idx.extend_from_slice(&idx[..h]);
        kept_idx.extend_from_slice(&idx[h..]);
    }
    kept_idx.sort_unstable();
    held_idx.sort_unstable();
    Ok((
        d.select(&kept_idx).with_split(tags.0),
        d.select(&held_idx).with_split(tags.1),
    ))
}

/// The protocol's three sets.
#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Test split at `testsize`, then validation split of the remainder at
/// `validationsplit`, both seeded by `randstate`.
pub fn protocol_splits(d: &Dataset, cfg: &SplitConfig) -> Result<Splits> {
    cfg.check()?;
    if !cfg.stratify {
        return Err(Error::Config(
            "only stratified splitting is supported".into(),
        ));
    }
    let (trainval, test) = stratified_split(
        d,
        cfg.testsize,
        cfg.randstate,
        (SplitTag::TrainVal, SplitTag::Test),
    )?;
    let (train, val) = stratified_split(
        &trainval,
        cfg.validationsplit,
        cfg.randstate,
        (SplitTag::Train, SplitTag::Validation),
    )?;
    Ok(Splits { train, val, test })
}
