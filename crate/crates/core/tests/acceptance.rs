//! One line per acceptance criterion; exits non-zero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use layerlab::data::{
    build_subset, load_source, names, protocol_splits, run_pipeline, stratified_split, Dataset,
    SampleSize, SourceKind, SplitConfig, SplitTag, SubsetSpec,
};
use layerlab::model::{base_seq, FilterSchedule, LayerDescriptor, Shape, SCHEDULE_NAMES};
use layerlab::mutations::{generate_grid, lolo, GridRecipe};
use layerlab::orchestrator::{
    aggregate, render_table, run_plan, trend_alignment, DataSource, ExperimentPlan, ReportFormat,
    RunOptions, RunStore, DEFAULT_TAU,
};
use layerlab::selfcheck::{all_passed, run_selfcheck};
use layerlab::train::{train, PreparedData, RunRecord, RunStatus, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn balanced(per_class: usize) -> Dataset {
    let labels: Vec<u8> = (0..2 * per_class).map(|i| (i % 2) as u8).collect();
    Dataset::new(
        vec![0; labels.len()],
        labels,
        (1, 1, 1),
        "balanced",
        names(&["a", "b"]),
    )
    .unwrap()
}

fn numeric_trust() -> Outcome {
    let t0 = Instant::now();
    let results = run_selfcheck();
    let secs = t0.elapsed().as_secs_f64();
    let failed: Vec<String> = results
        .iter()
        .filter(|r| !r.passed)
        .map(|r| format!("{} ({})", r.name, r.detail))
        .collect();
    ensure(
        all_passed(&results),
        format!("failed checks: {}", failed.join("; ")),
    )?;
    ensure(secs < 60.0, format!("took {secs:.1} s"))?;
    Ok(format!("{} checks in {secs:.2} s", results.len()))
}

fn protocol_arithmetic() -> Outcome {
    let d = balanced(64);
    let (trainval, test) = stratified_split(&d, 0.25, 42, (SplitTag::TrainVal, SplitTag::Test))
        .map_err(|e| e.to_string())?;
    ensure(
        (trainval.len(), test.len()) == (96, 32),
        format!("first level {}/{}", trainval.len(), test.len()),
    )?;
    let s = protocol_splits(&d, &SplitConfig::default()).map_err(|e| e.to_string())?;
    let sizes = (s.train.len(), s.val.len(), s.test.len());
    ensure(sizes == (72, 24, 32), format!("128 -> {sizes:?}"))?;
    for (set, half) in [(&s.train, 36), (&s.val, 12), (&s.test, 16)] {
        ensure(
            set.class_counts() == [half, half],
            format!("unbalanced {:?}", set.class_counts()),
        )?;
    }
    let (tv, test) = stratified_split(
        &balanced(300),
        0.25,
        42,
        (SplitTag::TrainVal, SplitTag::Test),
    )
    .map_err(|e| e.to_string())?;
    ensure(
        (tv.len(), test.len()) == (450, 150),
        format!("600 -> {}/{}", tv.len(), test.len()),
    )?;
    Ok("128 -> 96/32 -> 72/24 balanced; 600 -> 450/150".into())
}

fn grid_combinatorics() -> Outcome {
    let g = lolo(&base_seq(2).unwrap(), Shape::spatial(1, 28, 28)).map_err(|e| e.to_string())?;
    let candidates = &g.entries[1..];
    ensure(
        candidates.len() == 6,
        format!("lolo gave {} candidates", candidates.len()),
    )?;
    let invalid: Vec<&str> = candidates
        .iter()
        .filter(|e| !e.valid)
        .map(|e| e.spec.variant_id.as_str())
        .collect();
    ensure(
        invalid == ["BaseSeq-FCL"],
        format!("invalid candidates {invalid:?}"),
    )?;

    let recipe = GridRecipe {
        base: "BaseRes18".into(),
        ops: vec!["filterplacement".parse().unwrap()],
        num_classes: 10,
        input: Some([3, 32, 32]),
    };
    let g = generate_grid(&recipe).map_err(|e| e.to_string())?;
    ensure(
        g.variant_ids() == SCHEDULE_NAMES,
        format!("schedules {:?}", g.variant_ids()),
    )?;
    let stages = |id: &str| -> Vec<usize> {
        let e = g.entries.iter().find(|e| e.spec.variant_id == id).unwrap();
        e.spec
            .layers
            .iter()
            .filter_map(|l| match l {
                LayerDescriptor::ResStage { filters, .. } => Some(*filters),
                _ => None,
            })
            .collect()
    };
    let (up, down) = (stages("Res64to512"), stages("Res512to64"));
    ensure(
        up == [64, 128, 256, 512],
        format!("Res64to512 stages {up:?}"),
    )?;
    ensure(
        down.iter().rev().eq(up.iter()),
        format!("Res512to64 stages {down:?}"),
    )?;
    ensure(
        FilterSchedule::RES512TO64 == FilterSchedule::RES64TO512.reversed(),
        "named schedules disagree",
    )?;
    Ok(
        "lolo: 6 candidates, BaseSeq-FCL invalid; 4 schedules, Res512to64 = reverse(Res64to512)"
            .into(),
    )
}

fn blobs(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::new();
    let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    for &y in &labels {
        images.extend((0..64).map(|p| {
            let lit = (p % 8 < 4) == (y == 0);
            (if lit { 170 } else { 60 }) as u8 + rng.gen_range(0..50)
        }));
    }
    Dataset::new(
        images,
        labels,
        (1, 8, 8),
        "blobs",
        names(&["left", "right"]),
    )
    .unwrap()
}

fn small_plan(workers: usize, pipeline: &str, data: Dataset) -> ExperimentPlan {
    let recipe = GridRecipe {
        base: "BaseSeq".into(),
        ops: vec!["lolo".parse().unwrap(), "sare:Conv,BN".parse().unwrap()],
        num_classes: 2,
        input: None,
    };
    ExperimentPlan {
        grid: generate_grid(&recipe).unwrap(),
        datasets: vec![DataSource::Fixed(data)],
        pipeline: pipeline.parse().unwrap(),
        runs_per_variant: 2,
        train: TrainConfig {
            nepochs: 3,
            ..TrainConfig::default()
        },
        workers,
    }
}

fn run_to_file(plan: &ExperimentPlan, path: &Path) -> Result<Vec<u8>, String> {
    let mut store = RunStore::open(path).map_err(|e| e.to_string())?;
    let opts = RunOptions {
        reproducible: true,
        cancel: None,
    };
    run_plan(plan, &mut store, &opts, &mut |_| {}).map_err(|e| e.to_string())?;
    std::fs::read(path).map_err(|e| e.to_string())
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let one = run_to_file(
        &small_plan(1, "scale01", blobs(64, 3)),
        &dir.path().join("w1.jsonl"),
    )?;
    let four = run_to_file(
        &small_plan(4, "scale01", blobs(64, 3)),
        &dir.path().join("w4.jsonl"),
    )?;
    ensure(
        !one.is_empty() && one == four,
        "stores differ between workers=1 and workers=4",
    )?;
    let lines = one.iter().filter(|&&b| b == b'\n').count();
    Ok(format!("{lines} records, {} bytes, identical", one.len()))
}

/// Logistic regression by full-batch gradient descent on `[0, 1]` pixels.
fn logistic_baseline(train: &Dataset, test: &Dataset) -> f64 {
    let dim = train.image_len();
    let xs = |d: &Dataset, i: usize| -> Vec<f64> {
        d.image(i).iter().map(|&p| p as f64 / 255.0).collect()
    };
    let rows: Vec<(Vec<f64>, f64)> = (0..train.len())
        .map(|i| (xs(train, i), train.labels()[i] as f64))
        .collect();
    let (mut w, mut b) = (vec![0.0f64; dim], 0.0f64);
    for _ in 0..300 {
        let mut gw = vec![0.0; dim];
        let mut gb = 0.0;
        for (x, y) in &rows {
            let z: f64 = x.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>() + b;
            let err = 1.0 / (1.0 + (-z).exp()) - y;
            gw.iter_mut().zip(x).for_each(|(g, a)| *g += err * a);
            gb += err;
        }
        let n = rows.len() as f64;
        w.iter_mut().zip(&gw).for_each(|(c, g)| *c -= 0.5 * g / n);
        b -= 0.5 * gb / n;
    }
    let correct = (0..test.len())
        .filter(|&i| {
            let z: f64 = xs(test, i).iter().zip(&w).map(|(a, c)| a * c).sum::<f64>() + b;
            (z > 0.0) == (test.labels()[i] == 1)
        })
        .count();
    correct as f64 / test.len() as f64
}

fn desk_training() -> Outcome {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist-1-5");
    let full = load_source(SourceKind::MnistIdx, &dir).map_err(|e| e.to_string())?;
    let spec = SubsetSpec {
        dataset: "mnist".into(),
        class_a: "1".into(),
        class_b: "5".into(),
        sample_size: SampleSize::Count(600),
        difficulty: None,
        seed: 0,
    };
    let subset = build_subset(&full, &spec).map_err(|e| e.to_string())?;
    let cfg = TrainConfig::default();

    let s = protocol_splits(&subset, &cfg.split_config()).map_err(|e| e.to_string())?;
    let trainval = s.train.clone().concat(&s.val).map_err(|e| e.to_string())?;
    let baseline = logistic_baseline(&trainval, &s.test);
    ensure(
        baseline >= 0.95,
        format!("logistic baseline only {baseline:.4}"),
    )?;

    let t0 = Instant::now();
    let data = PreparedData::new(&subset, &"scale01".parse().unwrap(), &cfg.split_config())
        .map_err(|e| e.to_string())?;
    let rec = train(&base_seq(2).unwrap(), &data, &cfg, 0).map_err(|e| e.to_string())?;
    let secs = t0.elapsed().as_secs_f64();
    let acc = rec.test_accuracy.unwrap_or(f64::NAN);
    ensure(
        rec.status == RunStatus::Ok,
        format!("run status {:?}", rec.status),
    )?;
    ensure(acc >= 0.95, format!("BaseSeq test accuracy {acc:.4}"))?;
    ensure(secs < 300.0, format!("took {secs:.1} s"))?;
    Ok(format!(
        "{}: BaseSeq {acc:.4} after {} epochs in {secs:.1} s; logistic baseline {baseline:.4}",
        subset.source, rec.epochs_completed
    ))
}

fn record(variant: &str, dataset: &str, run: u64, acc: f64) -> RunRecord {
    RunRecord {
        variant_id: variant.into(),
        dataset_id: dataset.into(),
        seed: run,
        run_index: run,
        subset_seed: None,
        status: RunStatus::Ok,
        reason: None,
        test_accuracy: Some(acc),
        epochs_completed: 0,
        best_val_loss: None,
        wall_time_s: 0.0,
        config_hash: "full".into(),
        engine_version: "0".into(),
        timestamp: 0,
    }
}

const TABLE4: [(&str, &str, [f64; 3]); 13] = [
    ("BaseSeq", "CIFAR-10", [0.622, 0.616, 0.607]),
    ("BaseSeq(BN-Conv)", "CIFAR-10", [0.637, 0.643, 0.632]),
    ("Res64to512", "CIFAR-10", [0.71, 0.721, 0.702]),
    ("Res512to64", "CIFAR-10", [0.758, 0.732, 0.748]),
    ("Res512", "CIFAR-10", [0.756, 0.769, 0.757]),
    ("Res64", "FMNIST", [0.901, 0.912, 0.908]),
    ("Res64to512", "FMNIST", [0.909, 0.902, 0.905]),
    ("Res512to64", "FMNIST", [0.909, 0.914, 0.916]),
    ("Res512", "FMNIST", [0.916, 0.918, 0.918]),
    ("Res64", "MNIST", [0.991, 0.991, 0.991]),
    ("Res64to512", "MNIST", [0.992, 0.992, 0.992]),
    ("Res512to64", "MNIST", [0.99, 0.988, 0.99]),
    ("Res512", "MNIST", [0.991, 0.992, 0.989]),
];

fn table4_reporting() -> Outcome {
    let mut store = RunStore::in_memory();
    for (v, d, runs) in TABLE4 {
        for (i, acc) in runs.into_iter().enumerate() {
            store
                .append(record(v, d, i as u64, acc))
                .map_err(|e| e.to_string())?;
        }
    }
    let table = aggregate(&store);
    for (v, d, runs) in TABLE4 {
        let want = runs.iter().sum::<f64>() / 3.0;
        let got = table.cell(v, d).map(|c| c.mean).unwrap_or(f64::NAN);
        ensure(
            (got - want).abs() < 1e-12,
            format!("{v}/{d} mean {got} vs {want}"),
        )?;
    }
    let res512 = table.cell("Res512", "CIFAR-10").unwrap().mean;
    ensure(
        format!("{res512:.5}") == "0.76067",
        format!("Res512 CIFAR-10 mean {res512}"),
    )?;

    let md = render_table(&table, ReportFormat::Markdown).map_err(|e| e.to_string())?;
    let mut bolded: Vec<(String, String)> = Vec::new();
    let mut section = String::new();
    for line in md.lines() {
        if let Some(d) = line.strip_prefix("## ") {
            section = d.to_string();
        } else if line.starts_with("| ") && line.contains("**") {
            let variant = line.split('|').nth(1).unwrap().trim().to_string();
            bolded.push((section.clone(), variant));
        }
    }
    let want = [
        ("CIFAR-10", "Res512"),
        ("FMNIST", "Res512"),
        ("MNIST", "Res64to512"),
    ];
    let want: Vec<(String, String)> = want
        .iter()
        .map(|(d, v)| (d.to_string(), v.to_string()))
        .collect();
    ensure(bolded == want, format!("bold cells {bolded:?}"))?;
    Ok("13 triples; Res512 CIFAR-10 mean 0.76067; bold CIFAR-10 Res512, FMNIST Res512, MNIST Res64to512".into())
}

fn pipeline_order() -> Outcome {
    let mut px = vec![40u8; 8 * 8];
    for y in 0..8 {
        px[y * 8 + 4] = 255;
    }
    let probe = Dataset::new(px, vec![0], (1, 8, 8), "probe", names(&["a", "b"]))
        .map_err(|e| e.to_string())?;
    let (fp, pf) = ("torgb,sharpen,preprocess", "torgb,preprocess,sharpen");
    let a = run_pipeline(&probe, &fp.parse().unwrap()).map_err(|e| e.to_string())?;
    let b = run_pipeline(&probe, &pf.parse().unwrap()).map_err(|e| e.to_string())?;
    let diff = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0f32, f32::max);
    ensure(diff > 0.0, "orders agree on the saturating probe")?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut hashes = Vec::new();
    for (i, p) in [fp, pf].into_iter().enumerate() {
        let mut plan = small_plan(1, p, blobs(32, 5));
        plan.runs_per_variant = 1;
        plan.train.nepochs = 1;
        let text = run_to_file(&plan, &dir.path().join(format!("order{i}.jsonl")))?;
        let first: RunRecord = serde_json::from_slice(text.split(|&b| b == b'\n').next().unwrap())
            .map_err(|e| e.to_string())?;
        ensure(
            first.status == RunStatus::Ok,
            format!("{p}: {:?}", first.status),
        )?;
        hashes.push(first.config_hash);
    }
    ensure(hashes[0] != hashes[1], "both orders share a config hash")?;
    Ok(format!(
        "max abs diff {diff}; config hashes {} vs {}",
        hashes[0], hashes[1]
    ))
}

fn ranked(means: &[(&str, f64)]) -> RunStore {
    RunStore::from_records(means.iter().map(|&(v, a)| record(v, "D", 0, a)).collect())
}

fn alignment() -> Outcome {
    let err = |e: layerlab::Error| e.to_string();
    let a = ranked(&[("A", 0.9), ("B", 0.8), ("C", 0.7), ("D", 0.6)]);
    let rev = ranked(&[("A", 0.6), ("B", 0.7), ("C", 0.8), ("D", 0.9)]);
    let same = trend_alignment(&a, &a, DEFAULT_TAU, None)
        .map_err(err)?
        .pairwise_agreement;
    ensure(same == 1.0, format!("identical stores {same}"))?;
    let reversed = trend_alignment(&a, &rev, DEFAULT_TAU, None)
        .map_err(err)?
        .pairwise_agreement;
    ensure(reversed == 0.0, format!("reversed rankings {reversed}"))?;
    let back = trend_alignment(&rev, &a, DEFAULT_TAU, None)
        .map_err(err)?
        .pairwise_agreement;
    let x = ranked(&[("A", 0.9), ("B", 0.8), ("C", 0.7)]);
    let y = ranked(&[("A", 0.9), ("C", 0.8), ("B", 0.7)]);
    let xy = trend_alignment(&x, &y, DEFAULT_TAU, None)
        .map_err(err)?
        .pairwise_agreement;
    let yx = trend_alignment(&y, &x, DEFAULT_TAU, None)
        .map_err(err)?
        .pairwise_agreement;
    ensure(back == reversed && xy == yx, "agreement is not symmetric")?;
    ensure(
        (xy - 2.0 / 3.0).abs() < 1e-12,
        format!("A>B>C vs A>C>B gave {xy}"),
    )?;
    Ok(format!(
        "identical {same}, reversed {reversed}, symmetric, A>B>C vs A>C>B {xy:.4}"
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("numeric trust suite", numeric_trust),
        ("protocol arithmetic", protocol_arithmetic),
        ("grid combinatorics", grid_combinatorics),
        ("determinism across worker counts", determinism),
        ("desk-scale MNIST 1 vs 5 training", desk_training),
        ("results table reporting path", table4_reporting),
        ("pipeline order effect", pipeline_order),
        ("alignment metric properties", alignment),
    ];
    let mut failures = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t0 = Instant::now();
        let out = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = t0.elapsed().as_secs_f64();
        match out {
            Ok(detail) => println!("PASS {}. {name}: {detail} [{secs:.1} s]", i + 1),
            Err(why) => {
                failures += 1;
                println!("FAIL {}. {name}: {why} [{secs:.1} s]", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failures,
        criteria.len()
    );
    if failures > 0 {
        std::process::exit(1);
    }
}
