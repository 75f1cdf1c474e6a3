use serde::{Deserialize, Serialize};

use super::store::RunStore;
use crate::error::{Error, Result};

/// Means closer than this count as tied.
pub const TIE_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunValue {
    pub run_index: u64,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub variant_id: String,
    pub dataset_id: String,
    pub runs: Vec<RunValue>,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    /// Highest mean in its dataset, ties flagged together.
    pub best: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub datasets: Vec<String>,
    pub variants: Vec<String>,
    pub cells: Vec<CellStats>,
    /// (variant, dataset) pairs with no successful run.
    pub missing: Vec<(String, String)>,
}

impl ResultTable {
    pub fn cell(&self, variant: &str, dataset: &str) -> Option<&CellStats> {
        self.cells
            .iter()
            .find(|c| c.variant_id == variant && c.dataset_id == dataset)
    }

    pub fn best(&self, dataset: &str) -> Vec<&str> {
        self.cells
            .iter()
            .filter(|c| c.dataset_id == dataset && c.best)
            .map(|c| c.variant_id.as_str())
            .collect()
    }

    pub fn dataset_cells<'a>(
        &'a self,
        dataset: &'a str,
    ) -> impl Iterator<Item = &'a CellStats> + 'a {
        self.cells.iter().filter(move |c| c.dataset_id == dataset)
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Builds the table from `(variant, dataset, run_index, accuracy)` rows,
/// keeping first-seen order of variants and datasets.
pub fn table_from_runs(
    rows: &[(String, String, u64, f64)],
    variants: Vec<String>,
    datasets: Vec<String>,
) -> ResultTable {
    let mut cells = Vec::new();
    let mut missing = Vec::new();
    for d in &datasets {
        for v in &variants {
            let mut runs: Vec<RunValue> = rows
                .iter()
                .filter(|r| &r.0 == v && &r.1 == d)
                .map(|r| RunValue {
                    run_index: r.2,
                    accuracy: r.3,
                })
                .collect();
            if runs.is_empty() {
                missing.push((v.clone(), d.clone()));
                continue;
            }
            runs.sort_by_key(|r| r.run_index);
            let acc: Vec<f64> = runs.iter().map(|r| r.accuracy).collect();
            cells.push(CellStats {
                variant_id: v.clone(),
                dataset_id: d.clone(),
                mean: mean(&acc),
                min: acc.iter().copied().fold(f64::INFINITY, f64::min),
                max: acc.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                runs,
                best: false,
            });
        }
        let top = cells
            .iter()
            .filter(|c| &c.dataset_id == d)
            .map(|c| c.mean)
            .fold(f64::NEG_INFINITY, f64::max);
        for c in cells.iter_mut().filter(|c| &c.dataset_id == d) {
            c.best = (top - c.mean).abs() <= TIE_EPS;
        }
    }
    ResultTable {
        datasets,
        variants,
        cells,
        missing,
    }
}

/// Per (variant, dataset) run list, mean, min and max over successful runs,
/// with the best mean per dataset flagged.
pub fn aggregate(store: &RunStore) -> ResultTable {
    let rows: Vec<(String, String, u64, f64)> = store
        .records()
        .iter()
        .filter_map(|r| {
            let acc = r.test_accuracy.filter(|_| r.is_ok())?;
            Some((r.variant_id.clone(), r.dataset_id.clone(), r.run_index, acc))
        })
        .collect();
    let variants = store.distinct(|r| &r.variant_id);
    let datasets = store.distinct(|r| &r.dataset_id);
    table_from_runs(&rows, variants, datasets)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FluctuationRun {
    pub run_index: u64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset_seed: Option<u64>,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fluctuation {
    pub variant_id: String,
    pub dataset_id: String,
    pub runs: Vec<FluctuationRun>,
    pub mean: f64,
    pub range: f64,
    /// Sample standard deviation (n − 1 denominator).
    pub std: f64,
}

/// Spread of one cell's test accuracies across runs.
pub fn fluctuation(store: &RunStore, variant: &str, dataset: &str) -> Result<Fluctuation> {
    let mut runs: Vec<FluctuationRun> = store
        .cell(variant, dataset)
        .filter_map(|r| {
            Some(FluctuationRun {
                run_index: r.run_index,
                seed: r.seed,
                subset_seed: r.subset_seed,
                accuracy: r.test_accuracy.filter(|_| r.is_ok())?,
            })
        })
        .collect();
    if runs.len() < 2 {
        return Err(Error::Data(format!(
            "fluctuation needs at least 2 runs of {variant} on {dataset}, found {}",
            runs.len()
        )));
    }
    runs.sort_by_key(|r| r.run_index);
    let acc: Vec<f64> = runs.iter().map(|r| r.accuracy).collect();
    let m = mean(&acc);
    let var = acc.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (acc.len() - 1) as f64;
    let hi = acc.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = acc.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(Fluctuation {
        variant_id: variant.to_string(),
        dataset_id: dataset.to_string(),
        runs,
        mean: m,
        range: hi - lo,
        std: var.sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orchestrator::store::tests::record;
    use crate::train::RunStatus;

    fn store(rows: &[(&str, &str, &[f64])]) -> RunStore {
        let mut recs = Vec::new();
        for (v, d, accs) in rows {
            for (i, &a) in accs.iter().enumerate() {
                recs.push(record(v, d, i as u64, a));
            }
        }
        RunStore::from_records(recs)
    }

    #[test]
    fn means_and_best_flag() {
        let s = store(&[
            ("Res512", "CIFAR-10", &[0.756, 0.769, 0.757]),
            ("Res512to64", "CIFAR-10", &[0.758, 0.732, 0.748]),
        ]);
        let t = aggregate(&s);
        let c = t.cell("Res512", "CIFAR-10").unwrap();
        assert!((c.mean - 0.760_666_666_666_666_7).abs() < 1e-12);
        assert_eq!((c.min, c.max), (0.756, 0.769));
        assert!((t.cell("Res512to64", "CIFAR-10").unwrap().mean - 0.746).abs() < 1e-12);
        assert_eq!(t.best("CIFAR-10"), vec!["Res512"]);
    }

    #[test]
    fn single_run_and_ties_and_missing() {
        let s = store(&[("A", "x", &[0.5]), ("B", "x", &[0.5]), ("A", "y", &[0.9])]);
        let t = aggregate(&s);
        assert_eq!(t.cell("A", "x").unwrap().mean, 0.5);
        assert_eq!(t.best("x"), vec!["A", "B"]);
        assert_eq!(t.missing, vec![("B".to_string(), "y".to_string())]);
        assert!(t.cell("B", "y").is_none());
    }

    #[test]
    fn failed_runs_do_not_count() {
        let mut s = store(&[("A", "x", &[0.5])]);
        let mut bad = record("A", "x", 1, 0.0);
        bad.status = RunStatus::NonFinite;
        bad.test_accuracy = None;
        s.append(bad).unwrap();
        assert_eq!(aggregate(&s).cell("A", "x").unwrap().runs.len(), 1);
    }

    #[test]
    fn fluctuation_stats() {
        let s = store(&[("BaseSeq", "CIFAR-10", &[0.622, 0.616, 0.607])]);
        let f = fluctuation(&s, "BaseSeq", "CIFAR-10").unwrap();
        assert!((f.range - 0.015).abs() < 1e-12);
        let s = store(&[("A", "x", &[0.5, 0.7])]);
        assert!((fluctuation(&s, "A", "x").unwrap().std - 0.1f64 * 2f64.sqrt()).abs() < 1e-12);
        let s = store(&[("A", "x", &[0.3, 0.3, 0.3])]);
        assert_eq!(fluctuation(&s, "A", "x").unwrap().std, 0.0);
        let s = store(&[("A", "x", &[0.3])]);
        assert!(fluctuation(&s, "A", "x").is_err());
    }
}
