use serde::{Deserialize, Serialize};

pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    /// Loss or a gradient went non-finite; no test accuracy.
    NonFinite,
    /// The variant failed validation and was never trained.
    Invalid,
}

/// Outcome of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub variant_id: String,
    pub dataset_id: String,
    pub seed: u64,
    pub run_index: u64,
    /// Seed of the subset draw when the plan resamples per run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset_seed: Option<u64>,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(default)]
    pub test_accuracy: Option<f64>,
    pub epochs_completed: usize,
    #[serde(default)]
    pub best_val_loss: Option<f64>,
    pub wall_time_s: f64,
    pub config_hash: String,
    pub engine_version: String,
    /// Unix seconds.
    pub timestamp: u64,
}

impl RunRecord {
    /// Identity used to skip work already in a store.
    pub fn key(&self) -> (String, String, u64, String) {
        (
            self.variant_id.clone(),
            self.dataset_id.clone(),
            self.run_index,
            self.config_hash.clone(),
        )
    }

    pub fn is_ok(&self) -> bool {
        self.status == RunStatus::Ok
    }

    /// Zeroes the wall-clock fields so records from separate executions
    /// compare bitwise.
    pub fn scrub_timing(&mut self) {
        self.wall_time_s = 0.0;
        self.timestamp = 0;
    }
}

/// Current Unix time in seconds.
pub fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}
