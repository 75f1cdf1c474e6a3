use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use crate::error::{Error, Result};

/// Variance floor for the Gaussian estimator on constant pixels.
pub const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    /// Shannon entropy in bits of the pooled 256-bin intensity histogram.
    Hist,
    /// Mean per-pixel Gaussian differential entropy in nats, pixels in `[0, 1]`.
    Gaussian,
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hist" => Ok(Estimator::Hist),
            "gaussian" => Ok(Estimator::Gaussian),
            _ => Err(Error::Config(format!(
                "unknown entropy estimator '{s}' (expected hist or gaussian)"
            ))),
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Estimator::Hist => "hist",
            Estimator::Gaussian => "gaussian",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Entropy {
    pub value: f64,
    pub estimator: Estimator,
}

impl fmt::Display for Entropy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let unit = match self.estimator {
            Estimator::Hist => "bits",
            Estimator::Gaussian => "nats",
        };
        write!(f, "{:.4} {unit} ({})", self.value, self.estimator)
    }
}

pub fn dataset_entropy(d: &Dataset, estimator: Estimator) -> Result<Entropy> {
    if d.is_empty() {
        return Err(Error::Data("entropy of an empty dataset".into()));
    }
    let value = match estimator {
        Estimator::Hist => {
            let mut hist = [0u64; 256];
            for &p in d.images() {
                hist[p as usize] += 1;
            }
            let total = d.images().len() as f64;
            -hist
                .iter()
                .filter(|&&c| c > 0)
                .map(|&c| {
                    let p = c as f64 / total;
                    p * p.log2()
                })
                .sum::<f64>()
        }
        Estimator::Gaussian => {
            let per = d.image_len();
            let n = d.len() as f64;
            let mut sum = vec![0f64; per];
            let mut sq = vec![0f64; per];
            for i in 0..d.len() {
                for (j, &p) in d.image(i).iter().enumerate() {
                    let v = p as f64 / 255.0;
                    sum[j] += v;
                    sq[j] += v * v;
                }
            }
            let k = 2.0 * std::f64::consts::PI * std::f64::consts::E;
            sum.iter()
                .zip(&sq)
                .map(|(s, q)| {
                    let mean = s / n;
                    let var = (q / n - mean * mean).max(VARIANCE_FLOOR);
                    0.5 * (k * var).ln()
                })
                .sum::<f64>()
                / per as f64
        }
    };
    // -0.0 from the hist sum of a single bin
    Ok(Entropy {
        value: value + 0.0,
        estimator,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub source: String,
    pub n: usize,
    pub class_names: Vec<String>,
    pub class_counts: Vec<usize>,
    pub pixel_mean: f64,
    pub pixel_std: f64,
    pub entropy: Entropy,
}

pub fn dataset_stats(d: &Dataset, estimator: Estimator) -> Result<DatasetStats> {
    let entropy = dataset_entropy(d, estimator)?;
    let px = d.images();
    let m = px.len() as f64;
    let mean = px.iter().map(|&p| p as f64).sum::<f64>() / m;
    let var = px.iter().map(|&p| (p as f64 - mean).powi(2)).sum::<f64>() / m;
    Ok(DatasetStats {
        source: d.source.clone(),
        n: d.len(),
        class_names: d.class_names.clone(),
        class_counts: d.class_counts(),
        pixel_mean: mean,
        pixel_std: var.sqrt(),
        entropy,
    })
}
