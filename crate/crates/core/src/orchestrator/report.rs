use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::aggregate::{table_from_runs, ResultTable, RunValue};
use super::align::AlignmentReport;
use crate::error::{Error, Result};
use crate::fsutil;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Markdown,
    Svg,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Markdown => "md",
            ReportFormat::Svg => "svg",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "md" | "markdown" => Ok(ReportFormat::Markdown),
            "svg" | "svg-bars" => Ok(ReportFormat::Svg),
            _ => Err(Error::Config(format!(
                "unknown report format '{s}' (expected csv, md, svg)"
            ))),
        }
    }
}

const CSV_HEADER: [&str; 4] = ["variant_id", "dataset_id", "stat", "value"];

fn csv_err(e: csv::Error) -> Error {
    Error::Csv(e)
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Csv(e.into_error().into()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// One row per (variant, dataset, stat); stats are `run_<index>`, `mean`,
/// `min`, `max`, `best`, or `missing` for an empty cell.
pub fn table_to_csv(t: &ResultTable) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for d in &t.datasets {
        for v in &t.variants {
            match t.cell(v, d) {
                Some(c) => {
                    for r in &c.runs {
                        w.write_record([
                            v,
                            d,
                            &format!("run_{}", r.run_index),
                            &r.accuracy.to_string(),
                        ])
                        .map_err(csv_err)?;
                    }
                    for (stat, value) in [("mean", c.mean), ("min", c.min), ("max", c.max)] {
                        w.write_record([v, d, stat, &value.to_string()])
                            .map_err(csv_err)?;
                    }
                    w.write_record([v.as_str(), d, "best", if c.best { "1" } else { "0" }])
                        .map_err(csv_err)?;
                }
                None => w
                    .write_record([v.as_str(), d, "missing", ""])
                    .map_err(csv_err)?,
            }
        }
    }
    finish(w)
}

/// Rebuilds a table from [`table_to_csv`] output using its run rows.
pub fn table_from_csv(text: &str) -> Result<ResultTable> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let mut rows = Vec::new();
    let mut variants: Vec<String> = Vec::new();
    let mut datasets: Vec<String> = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let bad = |m: &str| Error::parse("report.csv", line as u64 + 2, m.to_string());
        if rec.len() != 4 {
            return Err(bad("expected 4 columns"));
        }
        let (v, d, stat, value) = (&rec[0], &rec[1], &rec[2], &rec[3]);
        if !variants.iter().any(|x| x == v) {
            variants.push(v.to_string());
        }
        if !datasets.iter().any(|x| x == d) {
            datasets.push(d.to_string());
        }
        if let Some(idx) = stat.strip_prefix("run_") {
            let idx: u64 = idx.parse().map_err(|_| bad("bad run index"))?;
            let acc: f64 = value.parse().map_err(|_| bad("bad accuracy"))?;
            rows.push((v.to_string(), d.to_string(), idx, acc));
        }
    }
    Ok(table_from_runs(&rows, variants, datasets))
}

fn join_runs(runs: &[RunValue]) -> String {
    runs.iter()
        .map(|r| r.accuracy.to_string())
        .collect::<Vec<_>>()
        .join(" / ")
}

/// Per-dataset tables with the best mean in bold.
pub fn table_to_markdown(t: &ResultTable) -> String {
    let mut s = String::from("# Results\n");
    if t.datasets.is_empty() {
        s.push_str("\nNo runs recorded.\n");
    }
    for d in &t.datasets {
        let _ = write!(
            s,
            "\n## {d}\n\n| Variant | Runs | Mean | Min | Max |\n|---|---|---|---|---|\n"
        );
        for c in t.dataset_cells(d) {
            let mean = format!("{:.5}", c.mean);
            let mean = if c.best { format!("**{mean}**") } else { mean };
            let _ = writeln!(
                s,
                "| {} | {} | {mean} | {} | {} |",
                c.variant_id,
                join_runs(&c.runs),
                c.min,
                c.max
            );
        }
        let missing: Vec<&str> = t
            .missing
            .iter()
            .filter(|(_, md)| md == d)
            .map(|(v, _)| v.as_str())
            .collect();
        if !missing.is_empty() {
            let _ = writeln!(s, "\nMissing: {}", missing.join(", "));
        }
    }
    s
}

const PALETTE: [&str; 8] = [
    "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#9c755f",
];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Grouped bars of mean accuracy with min–max whiskers, one group per dataset.
pub fn table_to_svg(t: &ResultTable) -> String {
    let (bar, gap, left, top, plot_h) = (18.0, 24.0, 50.0, 20.0, 240.0);
    let nv = t.variants.len().max(1) as f64;
    let group_w = nv * bar + gap;
    let width = left + group_w * t.datasets.len().max(1) as f64 + 160.0;
    let height = top + plot_h + 60.0;
    let y = |v: f64| top + plot_h * (1.0 - v.clamp(0.0, 1.0));
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" font-family=\"sans-serif\" font-size=\"11\">\n"
    );
    for i in 0..=4 {
        let v = i as f64 / 4.0;
        let _ = writeln!(
            s,
            "<line x1=\"{left}\" x2=\"{}\" y1=\"{y0}\" y2=\"{y0}\" stroke=\"#ddd\"/><text x=\"{}\" y=\"{}\" text-anchor=\"end\">{v:.2}</text>",
            width - 160.0,
            left - 4.0,
            y(v) + 4.0,
            y0 = y(v)
        );
    }
    for (gi, d) in t.datasets.iter().enumerate() {
        let gx = left + gap / 2.0 + gi as f64 * group_w;
        for (vi, v) in t.variants.iter().enumerate() {
            let Some(c) = t.cell(v, d) else { continue };
            let x = gx + vi as f64 * bar;
            let colour = PALETTE[vi % PALETTE.len()];
            let _ = writeln!(
                s,
                "<rect x=\"{x}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{colour}\"{}><title>{} {}: {:.4}</title></rect>",
                y(c.mean),
                bar - 2.0,
                y(0.0) - y(c.mean),
                if c.best { " stroke=\"#000\"" } else { "" },
                esc(v),
                esc(d),
                c.mean
            );
            let cx = x + (bar - 2.0) / 2.0;
            let _ = writeln!(
                s,
                "<line x1=\"{cx}\" x2=\"{cx}\" y1=\"{}\" y2=\"{}\" stroke=\"#333\"/>",
                y(c.min),
                y(c.max)
            );
        }
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
            gx + nv * bar / 2.0,
            y(0.0) + 16.0,
            esc(d)
        );
    }
    let lx = width - 150.0;
    for (vi, v) in t.variants.iter().enumerate() {
        let ly = top + vi as f64 * 16.0;
        let _ = writeln!(
            s,
            "<rect x=\"{lx}\" y=\"{ly}\" width=\"10\" height=\"10\" fill=\"{}\"/><text x=\"{}\" y=\"{}\">{}</text>",
            PALETTE[vi % PALETTE.len()],
            lx + 14.0,
            ly + 9.0,
            esc(v)
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn render_table(t: &ResultTable, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Csv => table_to_csv(t),
        ReportFormat::Markdown => Ok(table_to_markdown(t)),
        ReportFormat::Svg => Ok(table_to_svg(t)),
    }
}

/// Per-variant rows: means in both conditions and the change flags.
pub fn render_alignment(r: &AlignmentReport, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record([
                "variant_id",
                "mean_a",
                "mean_b",
                "changed_a",
                "changed_b",
                "matched",
            ])
            .map_err(csv_err)?;
            for v in &r.variants {
                w.write_record([
                    v.variant_id.clone(),
                    v.mean_a.to_string(),
                    v.mean_b.to_string(),
                    v.changed_a.to_string(),
                    v.changed_b.to_string(),
                    v.matched.to_string(),
                ])
                .map_err(csv_err)?;
            }
            finish(w)
        }
        ReportFormat::Markdown => {
            let mut s = format!(
                "# Trend alignment\n\nPairwise agreement: {:.4}\n\nTop-1: {} vs {} ({})\n\nControl: {}, tau {}\n\n| Variant | Mean A | Mean B | Changed A | Changed B | Match |\n|---|---|---|---|---|---|\n",
                r.pairwise_agreement,
                r.top1_a,
                r.top1_b,
                if r.top1_agreement { "agree" } else { "differ" },
                r.control,
                r.tau
            );
            for v in &r.variants {
                let _ = writeln!(
                    s,
                    "| {} | {:.4} | {:.4} | {} | {} | {} |",
                    v.variant_id,
                    v.mean_a,
                    v.mean_b,
                    v.changed_a,
                    v.changed_b,
                    if v.matched { "yes" } else { "no" }
                );
            }
            Ok(s)
        }
        ReportFormat::Svg => {
            let rows: Vec<_> = r
                .variants
                .iter()
                .flat_map(|v| {
                    [
                        (v.variant_id.clone(), "A".to_string(), 0, v.mean_a),
                        (v.variant_id.clone(), "B".to_string(), 0, v.mean_b),
                    ]
                })
                .collect();
            let variants = r.variants.iter().map(|v| v.variant_id.clone()).collect();
            Ok(table_to_svg(&table_from_runs(
                &rows,
                variants,
                vec!["A".into(), "B".into()],
            )))
        }
    }
}

/// Writes `<dir>/<stem>.<ext>` atomically and returns its path.
pub fn write_report(
    dir: &Path,
    stem: &str,
    format: ReportFormat,
    content: &str,
) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(format!("{stem}.{}", format.extension()));
    fsutil::write_atomic(&path, content.as_bytes())?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orchestrator::aggregate::aggregate;
    use crate::orchestrator::store::tests::record;
    use crate::orchestrator::store::RunStore;

    fn sample() -> ResultTable {
        let mut recs = vec![];
        for (i, a) in [0.756, 0.769, 0.757].into_iter().enumerate() {
            recs.push(record("Res512", "CIFAR-10", i as u64, a));
        }
        for (i, a) in [0.758, 0.732, 0.748].into_iter().enumerate() {
            recs.push(record("Res512to64", "CIFAR-10", i as u64, a));
        }
        recs.push(record("Res64", "FMNIST", 0, 0.901));
        aggregate(&RunStore::from_records(recs))
    }

    #[test]
    fn csv_round_trip() {
        let t = sample();
        let csv = table_to_csv(&t).unwrap();
        assert_eq!(table_from_csv(&csv).unwrap(), t);
    }

    #[test]
    fn empty_store_gives_header_only() {
        let csv = table_to_csv(&aggregate(&RunStore::in_memory())).unwrap();
        assert_eq!(csv, "variant_id,dataset_id,stat,value\n");
    }

    #[test]
    fn markdown_bolds_the_best_mean() {
        let md = table_to_markdown(&sample());
        let line = md.lines().find(|l| l.starts_with("| Res512 |")).unwrap();
        assert!(line.contains("**0.76067**"), "{line}");
        assert!(!md
            .lines()
            .find(|l| l.starts_with("| Res512to64 |"))
            .unwrap()
            .contains("**"));
        assert!(md.contains("Missing: Res512, Res512to64"));
    }

    #[test]
    fn svg_has_a_bar_per_cell() {
        let svg = table_to_svg(&sample());
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<rect").count(), 3 + 3);
    }

    #[test]
    fn unwritable_dir_is_an_io_error() {
        let f = tempfile::NamedTempFile::new().unwrap();
        let r = write_report(&f.path().join("sub"), "results", ReportFormat::Csv, "");
        assert!(matches!(r, Err(Error::Io { .. })));
    }
}
