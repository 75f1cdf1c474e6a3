use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{ImagePipeline, SplitConfig};
use crate::error::{Error, Result};
use crate::nn::AdamConfig;

/// What early stopping watches and whether it rolls back; fixed, but part of
/// the config hash so a later change would not silently reuse old records.
pub const STOPPING_POLICY: &str = "monitor=val_loss,min_delta=0,restore_best=false";
/// Filter kernels used by pipeline steps, declared for the same reason.
pub const FILTER_KERNELS: &str = "sharpen=[0,-1,0;-1,5,-1;0,-1,0],blur=box3";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batchsize: usize,
    pub nepochs: usize,
    pub validationsplit: f64,
    pub dropoutrate: f32,
    pub patience: usize,
    pub testsize: f64,
    pub randstate: u64,
    /// Base seed; run `i` uses `seed + i`.
    pub seed: u64,
    pub optimizer: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batchsize: 16,
            nepochs: 100,
            validationsplit: 0.25,
            dropoutrate: 0.25,
            patience: 10,
            testsize: 0.25,
            randstate: 42,
            seed: 0,
            optimizer: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn check(&self) -> Result<()> {
        for (name, v) in [
            ("batchsize", self.batchsize),
            ("nepochs", self.nepochs),
            ("patience", self.patience),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.dropoutrate > 0.0 && self.dropoutrate < 1.0) {
            return Err(Error::Config(format!(
                "dropoutrate must be in (0, 1), got {}",
                self.dropoutrate
            )));
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0
            && o.eps > 0.0
            && (0.0..1.0).contains(&o.beta1)
            && (0.0..1.0).contains(&o.beta2))
        {
            return Err(Error::Config(format!("bad optimizer settings {o}")));
        }
        self.split_config().check()
    }

    pub fn split_config(&self) -> SplitConfig {
        SplitConfig {
            testsize: self.testsize,
            randstate: self.randstate,
            validationsplit: self.validationsplit,
            stratify: true,
        }
    }

    pub fn run_seed(&self, run_index: u64) -> u64 {
        self.seed.wrapping_add(run_index)
    }

    /// Short hash over everything that shapes a run besides the model, the
    /// data and the run index. `resampled` marks plans that redraw the
    /// subset for every run.
    pub fn config_hash(&self, pipeline: &ImagePipeline, resampled: bool) -> String {
        let canon = serde_json::json!({
            "train": self,
            "pipeline": pipeline,
            "resample": resampled,
            "stopping": STOPPING_POLICY,
            "kernels": FILTER_KERNELS,
        });
        let digest = Sha256::digest(canon.to_string().as_bytes());
        format!("{digest:x}")[..16].to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = TrainConfig::default();
        assert_eq!(
            (c.batchsize, c.nepochs, c.patience, c.randstate),
            (16, 100, 10, 42)
        );
        assert_eq!(
            (c.testsize, c.validationsplit, c.dropoutrate),
            (0.25, 0.25, 0.25)
        );
        c.check().unwrap();
        assert_eq!(c.run_seed(2), 2);
    }

    #[test]
    fn hash_depends_on_pipeline_order() {
        let c = TrainConfig::default();
        let a = c.config_hash(&"torgb,sharpen,preprocess".parse().unwrap(), false);
        let b = c.config_hash(&"torgb,preprocess,sharpen".parse().unwrap(), false);
        assert_ne!(a, b);
        assert_eq!(
            a,
            c.config_hash(&"torgb,sharpen,preprocess".parse().unwrap(), false)
        );
        assert_eq!(a.len(), 16);
        assert_ne!(
            a,
            c.config_hash(&"torgb,sharpen,preprocess".parse().unwrap(), true)
        );
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c: TrainConfig = serde_json::from_str(r#"{"nepochs": 5}"#).unwrap();
        assert_eq!(c.nepochs, 5);
        assert_eq!(c.batchsize, 16);
        assert!(TrainConfig { batchsize: 0, ..c }.check().is_err());
    }
}
