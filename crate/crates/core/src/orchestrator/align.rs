use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::aggregate::TIE_EPS;
use super::store::RunStore;
use crate::error::{Error, Result};

pub const DEFAULT_TAU: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantAlignment {
    pub variant_id: String,
    pub mean_a: f64,
    pub mean_b: f64,
    /// |mean − control mean| > τ in each store.
    pub changed_a: bool,
    pub changed_b: bool,
    pub matched: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub control: String,
    pub tau: f64,
    pub variants: Vec<VariantAlignment>,
    /// Fraction of variant pairs ordered the same way in both stores; a tie
    /// in either store scores one half. 1.0 when fewer than two variants.
    pub pairwise_agreement: f64,
    pub top1_a: String,
    pub top1_b: String,
    pub top1_agreement: bool,
}

/// Mean successful accuracy per variant, pooled over the store's datasets.
fn variant_means(store: &RunStore) -> (Vec<String>, HashMap<String, f64>) {
    let mut sums: HashMap<String, (f64, usize)> = HashMap::new();
    let mut order = Vec::new();
    for r in store.records() {
        let Some(acc) = r.test_accuracy.filter(|_| r.is_ok()) else {
            continue;
        };
        let e = sums.entry(r.variant_id.clone()).or_insert_with(|| {
            order.push(r.variant_id.clone());
            (0.0, 0)
        });
        e.0 += acc;
        e.1 += 1;
    }
    let means = sums
        .into_iter()
        .map(|(k, (s, n))| (k, s / n as f64))
        .collect();
    (order, means)
}

fn sign(d: f64) -> i8 {
    if d.abs() <= TIE_EPS {
        0
    } else if d > 0.0 {
        1
    } else {
        -1
    }
}

/// Kendall-style concordance of variant rankings between two conditions.
///
/// `control` defaults to the first shared variant in `a`'s order.
pub fn trend_alignment(
    a: &RunStore,
    b: &RunStore,
    tau: f64,
    control: Option<&str>,
) -> Result<AlignmentReport> {
    if !(tau >= 0.0) {
        return Err(Error::Config(format!("tau must be >= 0, got {tau}")));
    }
    let (order_a, ma) = variant_means(a);
    let (_, mb) = variant_means(b);
    let shared: Vec<String> = order_a.into_iter().filter(|v| mb.contains_key(v)).collect();
    if shared.is_empty() {
        return Err(Error::Data(
            "the two stores share no successfully trained variant".into(),
        ));
    }
    let control = match control {
        Some(c) if shared.iter().any(|v| v == c) => c.to_string(),
        Some(c) => {
            return Err(Error::Data(format!(
                "control variant '{c}' is not in both stores"
            )))
        }
        None => shared[0].clone(),
    };

    let mut score = 0.0;
    let mut pairs = 0usize;
    for i in 0..shared.len() {
        for j in i + 1..shared.len() {
            let sa = sign(ma[&shared[i]] - ma[&shared[j]]);
            let sb = sign(mb[&shared[i]] - mb[&shared[j]]);
            score += match (sa, sb) {
                (0, _) | (_, 0) => 0.5,
                _ if sa == sb => 1.0,
                _ => 0.0,
            };
            pairs += 1;
        }
    }
    let top = |m: &HashMap<String, f64>| -> String {
        let mut best = &shared[0];
        for v in &shared[1..] {
            if m[v] > m[best] + TIE_EPS {
                best = v;
            }
        }
        best.clone()
    };
    let (ca, cb) = (ma[&control], mb[&control]);
    let variants = shared
        .iter()
        .map(|v| {
            let changed_a = (ma[v] - ca).abs() > tau;
            let changed_b = (mb[v] - cb).abs() > tau;
            VariantAlignment {
                variant_id: v.clone(),
                mean_a: ma[v],
                mean_b: mb[v],
                changed_a,
                changed_b,
                matched: changed_a == changed_b,
            }
        })
        .collect();
    let (top1_a, top1_b) = (top(&ma), top(&mb));
    Ok(AlignmentReport {
        control,
        tau,
        variants,
        pairwise_agreement: if pairs == 0 {
            1.0
        } else {
            score / pairs as f64
        },
        top1_agreement: top1_a == top1_b,
        top1_a,
        top1_b,
    })
}
