use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use layerlab::data::{
    build_subset, dataset_stats, load_source, read_llds, write_llds, Difficulty, Estimator,
    SampleSize, SourceKind, SubsetSpec,
};
use layerlab::fsutil;
use layerlab::mutations::{generate_grid, GridRecipe, MutationOp};
use layerlab::orchestrator::{
    aggregate, render_alignment, render_table, run_plan, trend_alignment, write_report, DatasetRef,
    ExperimentPlan, PlanFile, Progress, ReportFormat, RunOptions, RunStore,
    DEFAULT_RUNS_PER_VARIANT,
};
use layerlab::selfcheck::{all_passed, run_selfcheck};
use layerlab::train::{RunStatus, TrainConfig};
use log::warn;
use serde_json::json;

use crate::args::*;
use crate::Failure;

type Outcome = Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn print_json(v: &serde_json::Value) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(
        out,
        "{}",
        serde_json::to_string_pretty(v).expect("json value serialises")
    );
}

/// Every failure in dataset-build is about its inputs.
fn as_data(e: layerlab::Error) -> Failure {
    Failure::Data(e.to_string())
}

pub fn dataset_build(a: DatasetBuildArgs) -> Outcome {
    let kind: SourceKind = a.source.parse()?;
    let (class_a, class_b) = a
        .pair
        .split_once(',')
        .ok_or_else(|| usage(format!("--pair expects A,B, got '{}'", a.pair)))?;
    let sample_size: SampleSize = a.size.parse().map_err(as_data)?;
    let difficulty = match a
        .difficulty
        .as_deref()
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        None => None,
        Some("hard") => Some(Difficulty::Hard),
        Some("easy") => Some(Difficulty::Easy),
        Some(other) => {
            return Err(usage(format!(
                "--difficulty must be hard or easy, got '{other}'"
            )))
        }
    };
    let full = load_source(kind, &a.dir).map_err(as_data)?;
    let spec = SubsetSpec {
        dataset: kind.dataset_name().into(),
        class_a: class_a.trim().into(),
        class_b: class_b.trim().into(),
        sample_size,
        difficulty,
        seed: a.seed,
    };
    let subset = build_subset(&full, &spec).map_err(as_data)?;
    write_llds(&a.out, &subset, Some(&spec))?;
    eprintln!(
        "wrote {} ({} images) to {}",
        subset.source,
        subset.len(),
        a.out.display()
    );
    print_json(&json!({
        "path": a.out,
        "name": subset.source,
        "n": subset.len(),
        "dims": [subset.channels(), subset.height(), subset.width()],
        "class_names": subset.class_names,
        "class_counts": subset.class_counts(),
    }));
    Ok(())
}

fn parse_dims(s: &str) -> Result<[usize; 3], Failure> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| usage(format!("--input expects C,H,W, got '{s}'")))
        })
        .collect::<Result<_, _>>()?;
    parts
        .try_into()
        .map_err(|_| usage(format!("--input expects C,H,W, got '{s}'")))
}

pub fn grid(a: GridArgs) -> Outcome {
    let ops = a
        .ops
        .iter()
        .map(|s| s.parse::<MutationOp>())
        .collect::<layerlab::Result<Vec<_>>>()?;
    let recipe = GridRecipe {
        base: a.base,
        ops,
        num_classes: a.classes,
        input: a.input.as_deref().map(parse_dims).transpose()?,
    };
    let grid = generate_grid(&recipe)?;
    for w in &grid.warnings {
        warn!("{w}");
    }
    let invalid = grid.entries.iter().filter(|e| !e.valid).count();
    let json = grid.to_json();
    match &a.out {
        Some(path) => {
            fsutil::write_atomic(path, json.as_bytes())?;
            eprintln!(
                "{} variants ({invalid} invalid) written to {}",
                grid.len(),
                path.display()
            );
        }
        None => println!("{json}"),
    }
    Ok(())
}

fn plan_from_flags(a: &RunArgs) -> Result<ExperimentPlan, Failure> {
    let grid = a.grid.clone().expect("clap requires --grid without --plan");
    let mut train = match &a.config {
        Some(p) => serde_json::from_slice::<TrainConfig>(&fsutil::read(p)?)
            .map_err(|e| Failure::Data(format!("{}: {e}", p.display())))?,
        None => TrainConfig::default(),
    };
    override_train(&mut train, a);
    let file = PlanFile {
        grid_path: grid,
        datasets: a.data.iter().cloned().map(DatasetRef::Path).collect(),
        pipeline: a.pipeline.as_deref().unwrap_or("").parse()?,
        runs_per_variant: a.runs.unwrap_or(DEFAULT_RUNS_PER_VARIANT),
        train_config: train,
        workers: a.workers.unwrap_or(1),
    };
    Ok(file.into_plan()?)
}

fn override_train(t: &mut TrainConfig, a: &RunArgs) {
    if let Some(v) = a.nepochs {
        t.nepochs = v;
    }
    if let Some(v) = a.batchsize {
        t.batchsize = v;
    }
    if let Some(v) = a.patience {
        t.patience = v;
    }
    if let Some(v) = a.seed {
        t.seed = v;
    }
}

fn progress_line(p: Progress<'_>) {
    let r = p.record;
    let tail = match r.status {
        RunStatus::Ok => format!(
            "ok acc={:.4} epochs={}",
            r.test_accuracy.unwrap_or(f64::NAN),
            r.epochs_completed
        ),
        RunStatus::NonFinite => format!("non-finite after {} epochs", r.epochs_completed),
        RunStatus::Invalid => format!("invalid: {}", r.reason.as_deref().unwrap_or("")),
    };
    eprintln!(
        "[{}/{}] {} on {} run {}: {tail}",
        p.written, p.total, r.variant_id, r.dataset_id, r.run_index
    );
}

pub fn run(a: RunArgs) -> Outcome {
    let mut plan = match &a.plan {
        Some(p) => {
            let mut file = PlanFile::read(p)?;
            override_train(&mut file.train_config, &a);
            if let Some(w) = a.workers {
                file.workers = w;
            }
            file.into_plan()?
        }
        None => plan_from_flags(&a)?,
    };
    if let Some(w) = a.workers {
        plan.workers = w;
    }
    let cancel = Arc::new(AtomicBool::new(false));
    {
        let cancel = cancel.clone();
        let handler = ctrlc::set_handler(move || {
            if !cancel.swap(true, Ordering::SeqCst) {
                eprintln!("interrupt: finishing in-flight runs, then stopping");
            }
        });
        if let Err(e) = handler {
            warn!("cannot install Ctrl-C handler: {e}");
        }
    }
    let mut store = RunStore::open(&a.store)?;
    let opts = RunOptions {
        reproducible: a.reproducible,
        cancel: Some(cancel),
    };
    let s = run_plan(&plan, &mut store, &opts, &mut progress_line)?;
    eprintln!(
        "{} skipped, {} trained, {} invalid, {} non-finite{}",
        s.skipped,
        s.trained,
        s.invalid,
        s.non_finite,
        if s.cancelled { " (cancelled)" } else { "" }
    );
    print_json(&json!({
        "store": a.store,
        "records": store.len(),
        "workers": plan.workers,
        "trained": s.trained,
        "skipped": s.skipped,
        "invalid": s.invalid,
        "non_finite": s.non_finite,
        "cancelled": s.cancelled,
    }));
    if s.cancelled {
        return Err(Failure::Run("interrupted before the plan completed".into()));
    }
    if s.non_finite > 0 {
        return Err(Failure::Run(format!(
            "{} run(s) aborted on non-finite values",
            s.non_finite
        )));
    }
    Ok(())
}

fn store_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "report".into())
}

pub fn report(a: ReportArgs) -> Outcome {
    let format: ReportFormat = a.format.parse()?;
    let store = RunStore::load(&a.store)?;
    let table = aggregate(&store);
    let text = render_table(&table, format)?;
    match &a.out {
        Some(dir) => {
            let path = write_report(dir, &store_stem(&a.store), format, &text)?;
            println!("{}", path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

pub fn align(a: AlignArgs) -> Outcome {
    if !(a.tau >= 0.0 && a.tau.is_finite()) {
        return Err(usage(format!(
            "--tau must be a non-negative number, got {}",
            a.tau
        )));
    }
    let sa = RunStore::load(&a.store_a)?;
    let sb = RunStore::load(&a.store_b)?;
    let r = trend_alignment(&sa, &sb, a.tau, a.control.as_deref())?;
    if let (Some(fmt), Some(dir)) = (&a.format, &a.out) {
        let format: ReportFormat = fmt.parse()?;
        let stem = format!(
            "align-{}-{}",
            store_stem(&a.store_a),
            store_stem(&a.store_b)
        );
        let path = write_report(dir, &stem, format, &render_alignment(&r, format)?)?;
        eprintln!("wrote {}", path.display());
    }
    print_json(&serde_json::to_value(&r).expect("report serialises"));
    Ok(())
}

pub fn selfcheck(a: SelfcheckArgs) -> Outcome {
    let results = run_selfcheck();
    let mut out = std::io::stdout().lock();
    for r in &results {
        if a.json {
            let v = json!({
                "name": r.name,
                "passed": r.passed,
                "metric": r.metric,
                "threshold": r.threshold,
                "detail": r.detail,
                "seconds": r.seconds,
            });
            let _ = writeln!(out, "{v}");
        } else {
            let mark = if r.passed { "PASS" } else { "FAIL" };
            let _ = writeln!(
                out,
                "{mark}  {:<32} {:<24} {:>7.3} s",
                r.name, r.detail, r.seconds
            );
        }
    }
    let total: f64 = results.iter().map(|r| r.seconds).sum();
    let failed = results.iter().filter(|r| !r.passed).count();
    eprintln!("{} checks, {failed} failed, {total:.2} s", results.len());
    if all_passed(&results) {
        Ok(())
    } else {
        Err(Failure::Run(format!("{failed} self-check(s) failed")))
    }
}

pub fn stats(a: StatsArgs) -> Outcome {
    let estimator: Estimator = a.estimator.parse()?;
    let d = match (&a.data, &a.source, &a.dir) {
        (Some(p), _, _) => read_llds(p)?.0,
        (None, Some(kind), Some(dir)) => load_source(kind.parse()?, dir)?,
        _ => return Err(usage("give --data FILE or --source KIND --dir PATH")),
    };
    let s = dataset_stats(&d, estimator)?;
    print_json(&serde_json::to_value(&s).expect("stats serialise"));
    Ok(())
}
