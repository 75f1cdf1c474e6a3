use std::time::Instant;

use log::debug;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use super::early_stop::EarlyStopping;
use super::record::{unix_now, RunRecord, RunStatus, ENGINE_VERSION};
use crate::data::{
    protocol_splits, run_pipeline, Dataset, ImagePipeline, SplitConfig, SplitTag, TensorDataset,
};
use crate::error::{Error, Result};
use crate::model::{compile, ModelSpec, Network, Shape};
use crate::nn::{softmax_ce_loss, Adam, Mode};
use crate::tensor::Tape;

const EVAL_BATCH: usize = 256;
const DROPOUT_STREAM: u64 = u64::MAX;

/// A dataset split three ways and pushed through its pipeline.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub dataset_id: String,
    pub pipeline: ImagePipeline,
    pub train: TensorDataset,
    pub val: TensorDataset,
    pub test: TensorDataset,
    /// Set when the subset was redrawn for this run.
    pub subset_seed: Option<u64>,
}

impl PreparedData {
    pub fn new(d: &Dataset, pipeline: &ImagePipeline, split: &SplitConfig) -> Result<Self> {
        let s = protocol_splits(d, split)?;
        Ok(PreparedData {
            dataset_id: d.source.clone(),
            pipeline: pipeline.clone(),
            train: run_pipeline(&s.train, pipeline)?,
            val: run_pipeline(&s.val, pipeline)?,
            test: run_pipeline(&s.test, pipeline)?,
            subset_seed: None,
        })
    }

    pub fn input_shape(&self) -> Shape {
        let (c, h, w) = self.train.dims;
        Shape::spatial(c, h, w)
    }

    pub fn num_classes(&self) -> usize {
        self.train.num_classes
    }

    fn check_provenance(&self) -> Result<()> {
        for (set, want) in [
            (&self.train, SplitTag::Train),
            (&self.val, SplitTag::Validation),
            (&self.test, SplitTag::Test),
        ] {
            if set.split != want {
                return Err(Error::Data(format!(
                    "expected a {want:?} split, got {:?}",
                    set.split
                )));
            }
            if set.is_empty() {
                return Err(Error::Data(format!("{want:?} split is empty")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub record: RunRecord,
    pub network: Network,
    pub history: Vec<EpochLog>,
}

/// Batches of `size` over `order`; a trailing batch of one joins the one before.
pub fn batch_ranges(n: usize, size: usize) -> Vec<std::ops::Range<usize>> {
    let mut out: Vec<_> = (0..n)
        .step_by(size.max(1))
        .map(|s| s..(s + size).min(n))
        .collect();
    if out.len() > 1 && out.last().is_some_and(|r| r.len() == 1) {
        let last = out.pop().unwrap();
        out.last_mut().unwrap().end = last.end;
    }
    out
}

/// Mean cross-entropy over `set` in Eval mode.
pub fn mean_loss(net: &mut Network, set: &TensorDataset) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut total = 0.0;
    for r in batch_ranges(set.len(), EVAL_BATCH) {
        let idx: Vec<usize> = r.collect();
        let (x, labels) = set.batch(&idx)?;
        let mut tape = Tape::new();
        let x = tape.constant(x);
        let (logits, _) = net.forward(&mut tape, x, Mode::Eval, &mut rng)?;
        let (loss, _) = softmax_ce_loss(&mut tape, logits, &labels)?;
        total += tape.value(loss).data()[0] as f64 * idx.len() as f64;
    }
    Ok(total / set.len() as f64)
}

/// Fraction of argmax predictions equal to the label, in Eval mode.
pub fn evaluate(net: &mut Network, test: &TensorDataset) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty test set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut correct = 0usize;
    for r in batch_ranges(test.len(), EVAL_BATCH) {
        let idx: Vec<usize> = r.collect();
        let (x, labels) = test.batch(&idx)?;
        let mut tape = Tape::new();
        let x = tape.constant(x);
        let (logits, _) = net.forward(&mut tape, x, Mode::Eval, &mut rng)?;
        let lv = tape.value(logits);
        let k = lv.shape()[1];
        for (row, &y) in lv.data().chunks_exact(k).zip(&labels) {
            if argmax(row) == y {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / test.len() as f64)
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// One mini-batch step; returns the batch loss, or `None` when the loss or a
/// gradient is non-finite (parameters are then left untouched).
fn step(
    net: &mut Network,
    adam: &mut Adam,
    set: &TensorDataset,
    idx: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<Option<f64>> {
    let (x, labels) = set.batch(idx)?;
    let mut tape = Tape::new();
    let x = tape.constant(x);
    let (logits, vars) = net.forward(&mut tape, x, Mode::Train, rng)?;
    let (loss, _) = softmax_ce_loss(&mut tape, logits, &labels)?;
    let value = tape.value(loss).data()[0] as f64;
    if !value.is_finite() {
        return Ok(None);
    }
    tape.backward(loss)?;
    let grads: Vec<_> = vars.iter().map(|&v| tape.take_grad(v)).collect();
    match adam.step(net.params_mut(), &grads) {
        Ok(()) => Ok(Some(value)),
        Err(Error::NonFinite(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Runs the training protocol and keeps the final network.
pub fn fit(
    spec: &ModelSpec,
    data: &PreparedData,
    cfg: &TrainConfig,
    run_index: u64,
) -> Result<TrainOutcome> {
    cfg.check()?;
    data.check_provenance()?;
    let started = Instant::now();
    let seed = cfg.run_seed(run_index);
    let mut net = compile(spec, data.input_shape(), data.num_classes(), seed)?;
    let mut adam = Adam::new(cfg.optimizer, net.params().iter().map(|p| p.len()));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(seed);
    dropout_rng.set_stream(DROPOUT_STREAM);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut history = Vec::new();
    let mut failure = None;

    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let batches = batch_ranges(order.len(), cfg.batchsize);
    'epochs: for epoch in 1..=cfg.nepochs {
        let mut shuffle = ChaCha8Rng::seed_from_u64(seed);
        shuffle.set_stream(epoch as u64);
        order.shuffle(&mut shuffle);
        let mut train_loss = 0.0;
        for r in &batches {
            match step(
                &mut net,
                &mut adam,
                &data.train,
                &order[r.clone()],
                &mut dropout_rng,
            )? {
                Some(l) => train_loss += l * r.len() as f64,
                None => {
                    failure = Some(format!("non-finite loss or gradient in epoch {epoch}"));
                    break 'epochs;
                }
            }
        }
        let val_loss = mean_loss(&mut net, &data.val)?;
        if !val_loss.is_finite() {
            failure = Some(format!("non-finite validation loss in epoch {epoch}"));
            break;
        }
        let log = EpochLog {
            epoch,
            train_loss: train_loss / order.len() as f64,
            val_loss,
        };
        debug!(
            "{} epoch {epoch}: train {:.4} val {:.4}",
            data.dataset_id, log.train_loss, log.val_loss
        );
        history.push(log);
        if stopper.update(epoch, val_loss) {
            break;
        }
    }

    let (status, test_accuracy) = match &failure {
        None => (RunStatus::Ok, Some(evaluate(&mut net, &data.test)?)),
        Some(_) => (RunStatus::NonFinite, None),
    };
    let record = RunRecord {
        variant_id: spec.variant_id.clone(),
        dataset_id: data.dataset_id.clone(),
        seed,
        run_index,
        subset_seed: data.subset_seed,
        status,
        reason: failure,
        test_accuracy,
        epochs_completed: history.len(),
        best_val_loss: stopper.best(),
        wall_time_s: started.elapsed().as_secs_f64(),
        config_hash: cfg.config_hash(&data.pipeline, data.subset_seed.is_some()),
        engine_version: ENGINE_VERSION.to_string(),
        timestamp: unix_now(),
    };
    Ok(TrainOutcome {
        record,
        network: net,
        history,
    })
}

pub fn train(
    spec: &ModelSpec,
    data: &PreparedData,
    cfg: &TrainConfig,
    run_index: u64,
) -> Result<RunRecord> {
    fit(spec, data, cfg, run_index).map(|o| o.record)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use rand::Rng;

    use super::*;
    use crate::data::names;
    use crate::model::{base0, base_seq, Family, LayerDescriptor};
    use crate::tensor::Tensor;

    /// Two 4×4 blobs, bright on the left or on the right, with per-pixel noise.
    fn blobs(per_class: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for i in 0..2 * per_class {
            let y = (i % 2) as u8;
            images.extend((0..16).map(|p| {
                let bright = (p % 4 < 2) == (y == 0);
                let centre = if bright { 200 } else { 50 };
                (centre + rng.gen_range(-40i32..=40)) as u8
            }));
            labels.push(y);
        }
        Dataset::new(
            images,
            labels,
            (1, 4, 4),
            "blobs",
            names(&["left", "right"]),
        )
        .unwrap()
    }

    fn prepared(d: &Dataset) -> PreparedData {
        PreparedData::new(
            d,
            &"scale01".parse().unwrap(),
            &TrainConfig::default().split_config(),
        )
        .unwrap()
    }

    fn flat(values: &[f32], labels: &[u8], split: SplitTag) -> TensorDataset {
        TensorDataset {
            data: values.to_vec(),
            labels: labels.to_vec(),
            dims: (1, 1, 1),
            num_classes: 2,
            split,
        }
    }

    fn linear_net(w: [f32; 2], b: [f32; 2]) -> Network {
        let mut net = compile(&base0(2).unwrap(), Shape::spatial(1, 1, 1), 2, 0).unwrap();
        net.params_mut()[0] = Arc::new(Tensor::new(&[1, 2], w.to_vec()).unwrap());
        net.params_mut()[1] = Arc::new(Tensor::new(&[2], b.to_vec()).unwrap());
        net
    }

    #[test]
    fn evaluate_counts_argmax_hits() {
        let balanced = flat(&[0.0, 1.0, 0.0, 1.0], &[0, 1, 0, 1], SplitTag::Test);
        assert_eq!(
            evaluate(&mut linear_net([0.0, 0.0], [1.0, 0.0]), &balanced).unwrap(),
            0.5
        );
        assert_eq!(
            evaluate(&mut linear_net([-1.0, 1.0], [0.0, 0.0]), &balanced).unwrap(),
            1.0
        );
        let three = flat(&[0.0, 1.0, 1.0, 1.0], &[0, 1, 1, 0], SplitTag::Test);
        assert_eq!(
            evaluate(&mut linear_net([-1.0, 1.0], [0.0, 0.0]), &three).unwrap(),
            0.75
        );
    }

    #[test]
    fn empty_test_set_is_an_error() {
        let empty = TensorDataset {
            data: vec![],
            labels: vec![],
            dims: (1, 1, 1),
            num_classes: 2,
            split: SplitTag::Test,
        };
        assert!(matches!(
            evaluate(&mut linear_net([0.0; 2], [0.0; 2]), &empty),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn separable_blobs_reach_full_accuracy() {
        let d = blobs(64, 1);
        // oracle: the hand-set boundary "right half brighter than left" separates every sample
        for i in 0..d.len() {
            let side = |right: bool| {
                d.image(i)
                    .iter()
                    .enumerate()
                    .filter(move |(p, _)| (p % 4 >= 2) == right)
            };
            let margin: i32 = side(true).map(|(_, &v)| v as i32).sum::<i32>()
                - side(false).map(|(_, &v)| v as i32).sum::<i32>();
            assert_eq!(margin > 0, d.labels()[i] == 1);
        }
        let data = prepared(&d);
        let r = train(&base0(2).unwrap(), &data, &TrainConfig::default(), 0).unwrap();
        assert_eq!(r.status, RunStatus::Ok);
        assert_eq!(r.test_accuracy, Some(1.0));
        assert!(r.epochs_completed <= 100);
    }

    #[test]
    fn runs_are_deterministic() {
        let data = prepared(&blobs(24, 2));
        let cfg = TrainConfig {
            nepochs: 4,
            ..TrainConfig::default()
        };
        let spec = base_seq(2).unwrap();
        let a = fit(&spec, &data, &cfg, 1).unwrap();
        let b = fit(&spec, &data, &cfg, 1).unwrap();
        assert_eq!(
            a.record.test_accuracy.map(f64::to_bits),
            b.record.test_accuracy.map(f64::to_bits)
        );
        assert_eq!(a.history, b.history);
        assert_eq!(a.record.seed, 1);
        let c = fit(&spec, &data, &cfg, 2).unwrap();
        assert_ne!(a.history, c.history);
    }

    #[test]
    fn provenance_is_checked() {
        let mut data = prepared(&blobs(16, 3));
        std::mem::swap(&mut data.val, &mut data.test);
        assert!(matches!(
            train(&base0(2).unwrap(), &data, &TrainConfig::default(), 0),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn exploding_run_records_non_finite() {
        let data = PreparedData::new(
            &blobs(16, 4),
            &ImagePipeline::default(),
            &TrainConfig::default().split_config(),
        )
        .unwrap();
        let mut cfg = TrainConfig::default();
        cfg.optimizer.lr = 1e38;
        let r = train(&base0(2).unwrap(), &data, &cfg, 0).unwrap();
        assert_eq!(r.status, RunStatus::NonFinite);
        assert_eq!(r.test_accuracy, None);
        assert!(r.reason.unwrap().contains("non-finite"));
    }

    #[test]
    fn base_seq_overfits_eight_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let images: Vec<u8> = (0..8 * 28 * 28).map(|_| rng.gen()).collect();
        let labels = vec![0, 1, 0, 1, 1, 0, 0, 1];
        let d = Dataset::new(images, labels, (1, 28, 28), "noise", names(&["a", "b"])).unwrap();
        let set = run_pipeline(&d, &"scale01".parse().unwrap()).unwrap();
        let layers: Vec<_> = base_seq(2)
            .unwrap()
            .layers
            .into_iter()
            .filter(|l| !matches!(l, LayerDescriptor::Dropout { .. }))
            .collect();
        let spec = ModelSpec::new(Family::BaseSeq, layers);
        let mut net = compile(&spec, Shape::spatial(1, 28, 28), 2, 0).unwrap();
        let mut adam = Adam::new(Default::default(), net.params().iter().map(|p| p.len()));
        let idx: Vec<usize> = (0..8).collect();
        let mut last = f64::INFINITY;
        for _ in 0..200 {
            last = step(&mut net, &mut adam, &set, &idx, &mut rng)
                .unwrap()
                .unwrap();
        }
        assert!(last < 0.01, "loss after 200 steps: {last}");
    }

    #[test]
    fn trailing_singleton_batch_is_merged() {
        let sizes = |n, b| {
            batch_ranges(n, b)
                .iter()
                .map(|r| r.len())
                .collect::<Vec<_>>()
        };
        assert_eq!(sizes(33, 16), vec![16, 17]);
        assert_eq!(sizes(34, 16), vec![16, 16, 2]);
        assert_eq!(sizes(1, 16), vec![1]);
        assert_eq!(sizes(72, 16), vec![16, 16, 16, 16, 8]);
    }
}
