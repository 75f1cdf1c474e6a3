use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{mpsc, Arc};

use log::{info, warn};

use super::plan::ExperimentPlan;
use super::store::RunStore;
use crate::error::Result;
use crate::model::Shape;
use crate::train::{train, unix_now, PreparedData, RunRecord, RunStatus, ENGINE_VERSION};

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Zero wall-clock fields so stores from separate executions compare bitwise.
    pub reproducible: bool,
    /// When raised, no new runs start; finished ones are still written.
    pub cancel: Option<Arc<AtomicBool>>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunSummary {
    pub trained: usize,
    pub skipped: usize,
    pub invalid: usize,
    pub non_finite: usize,
    pub cancelled: bool,
}

pub struct Progress<'a> {
    pub written: usize,
    pub total: usize,
    pub record: &'a RunRecord,
}

struct TrainJob {
    slot: usize,
    entry: usize,
    run: u64,
    data: Arc<PreparedData>,
}

/// Trains every pending (dataset, variant, run) of `plan` and appends the
/// records to `store` in plan order, whatever the worker count.
pub fn run_plan(
    plan: &ExperimentPlan,
    store: &mut RunStore,
    opts: &RunOptions,
    progress: &mut dyn FnMut(Progress<'_>),
) -> Result<RunSummary> {
    plan.check()?;
    let done = store.keys();
    let mut summary = RunSummary::default();
    let mut slots: Vec<Option<RunRecord>> = Vec::new();
    let mut jobs: Vec<TrainJob> = Vec::new();
    let mut prepared: HashMap<(usize, u64), Arc<PreparedData>> = HashMap::new();

    for (di, source) in plan.datasets.iter().enumerate() {
        let dataset_id = source.id();
        let hash = plan.train.config_hash(&plan.pipeline, source.resamples());
        let ((c, h, w), k) = source.dims();
        let (c, h, w) = plan.pipeline.validate((c, h, w))?;
        let input = Shape::spatial(c, h, w);
        for (ei, entry) in plan.grid.entries.iter().enumerate() {
            let variant = &entry.spec.variant_id;
            let invalid = match (&entry.valid, entry.spec.validate(input, k)) {
                (false, _) => Some(
                    entry
                        .reason
                        .clone()
                        .unwrap_or_else(|| "invalid variant".into()),
                ),
                (true, Err(e)) => Some(e.to_string()),
                (true, Ok(_)) => None,
            };
            if let Some(reason) = invalid {
                let key = (variant.clone(), dataset_id.clone(), 0, hash.clone());
                if done.contains(&key) {
                    summary.skipped += 1;
                    continue;
                }
                summary.invalid += 1;
                slots.push(Some(RunRecord {
                    variant_id: variant.clone(),
                    dataset_id: dataset_id.clone(),
                    seed: plan.train.run_seed(0),
                    run_index: 0,
                    subset_seed: None,
                    status: RunStatus::Invalid,
                    reason: Some(reason),
                    test_accuracy: None,
                    epochs_completed: 0,
                    best_val_loss: None,
                    wall_time_s: 0.0,
                    config_hash: hash.clone(),
                    engine_version: ENGINE_VERSION.to_string(),
                    timestamp: if opts.reproducible { 0 } else { unix_now() },
                }));
                continue;
            }
            for run in 0..plan.runs_per_variant as u64 {
                if done.contains(&(variant.clone(), dataset_id.clone(), run, hash.clone())) {
                    summary.skipped += 1;
                    continue;
                }
                let data_key = (di, if source.resamples() { run } else { 0 });
                let data = match prepared.get(&data_key) {
                    Some(d) => Arc::clone(d),
                    None => {
                        let d = Arc::new(source.prepare(&plan.pipeline, &plan.train, run)?);
                        prepared.insert(data_key, Arc::clone(&d));
                        d
                    }
                };
                jobs.push(TrainJob {
                    slot: slots.len(),
                    entry: ei,
                    run,
                    data,
                });
                slots.push(None);
            }
        }
    }

    let total = slots.len();
    info!(
        "{} runs to train, {} invalid, {} already in store",
        jobs.len(),
        summary.invalid,
        summary.skipped
    );
    let cancel = opts.cancel.clone().unwrap_or_default();
    let stop = AtomicBool::new(false);
    let next = AtomicUsize::new(0);
    let mut written = 0usize;
    let mut first_error = None;

    let mut flush = |slots: &mut Vec<Option<RunRecord>>,
                     upto_gap: bool,
                     store: &mut RunStore,
                     summary: &mut RunSummary|
     -> Result<()> {
        while written < slots.len() {
            let Some(rec) = slots[written].take() else {
                if upto_gap {
                    break;
                }
                written += 1;
                continue;
            };
            match rec.status {
                RunStatus::Ok => summary.trained += 1,
                RunStatus::NonFinite => summary.non_finite += 1,
                RunStatus::Invalid => {}
            }
            store.append(rec)?;
            written += 1;
            progress(Progress {
                written: store.len(),
                total,
                record: store.records().last().expect("just appended"),
            });
        }
        Ok(())
    };

    std::thread::scope(|scope| -> Result<()> {
        let (tx, rx) = mpsc::channel::<(usize, Result<RunRecord>)>();
        let workers = plan.workers.min(jobs.len());
        for _ in 0..workers {
            let tx = tx.clone();
            let (jobs, next, stop, cancel) = (&jobs, &next, &stop, &cancel);
            scope.spawn(move || loop {
                if stop.load(Ordering::SeqCst) || cancel.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(job) = jobs.get(i) else { break };
                let spec = &plan.grid.entries[job.entry].spec;
                let out = train(spec, &job.data, &plan.train, job.run);
                if tx.send((job.slot, out)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        flush(&mut slots, true, store, &mut summary)?;
        for (slot, out) in rx {
            match out {
                Ok(mut rec) => {
                    if opts.reproducible {
                        rec.scrub_timing();
                    }
                    slots[slot] = Some(rec);
                    flush(&mut slots, true, store, &mut summary)?;
                }
                Err(e) => {
                    stop.store(true, Ordering::SeqCst);
                    warn!("run failed: {e}");
                    first_error.get_or_insert(e);
                }
            }
        }
        Ok(())
    })?;

    flush(&mut slots, false, store, &mut summary)?;
    summary.cancelled = cancel.load(Ordering::SeqCst);
    match first_error {
        Some(e) => Err(e),
        None => Ok(summary),
    }
}
