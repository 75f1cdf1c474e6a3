//! Grids × datasets × seeds: execution, the run store and reporting.

mod aggregate;
mod align;
mod plan;
mod report;
mod runner;
mod store;

pub use aggregate::{
    aggregate, fluctuation, table_from_runs, CellStats, Fluctuation, FluctuationRun, ResultTable,
    RunValue, TIE_EPS,
};
pub use align::{trend_alignment, AlignmentReport, VariantAlignment, DEFAULT_TAU};
pub use plan::{
    DataSource, DatasetRef, ExperimentPlan, PlanFile, ResampleFrom, DEFAULT_RUNS_PER_VARIANT,
};
pub use report::{
    render_alignment, render_table, table_from_csv, table_to_csv, table_to_markdown, table_to_svg,
    write_report, ReportFormat,
};
pub use runner::{run_plan, Progress, RunOptions, RunSummary};
pub use store::{parse_jsonl, RunKey, RunStore};
