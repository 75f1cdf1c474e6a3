//! Mini-batch training with validation-monitored early stopping.

mod config;
mod early_stop;
mod record;
mod trainer;

pub use config::{TrainConfig, FILTER_KERNELS, STOPPING_POLICY};
pub use early_stop::EarlyStopping;
pub use record::{unix_now, RunRecord, RunStatus, ENGINE_VERSION};
pub use trainer::{
    batch_ranges, evaluate, fit, mean_loss, train, EpochLog, PreparedData, TrainOutcome,
};
