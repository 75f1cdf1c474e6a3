use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "layerlab",
    version,
    about = "Layer-level architecture experiments on small image subsets"
)]
pub struct Cli {
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Draw a balanced two-class subset and write it as LLDS plus sidecar.
    DatasetBuild(DatasetBuildArgs),
    /// Expand a base model and mutation operators into a variant grid.
    Grid(GridArgs),
    /// Train every pending (dataset, variant, run) into a run store.
    Run(RunArgs),
    /// Aggregate a run store into a csv, md or svg report.
    Report(ReportArgs),
    /// Compare variant rankings between two run stores.
    Align(AlignArgs),
    /// Gradient checks, forward oracles and determinism probes.
    Selfcheck(SelfcheckArgs),
    /// Class counts, pixel moments and entropy of a dataset.
    Stats(StatsArgs),
}

#[derive(Args, Debug)]
pub struct DatasetBuildArgs {
    /// mnist-idx, fmnist-idx, cifar-bin or llds.
    #[arg(long)]
    pub source: String,
    /// Source directory (or the .llds file for --source llds).
    #[arg(long)]
    pub dir: PathBuf,
    /// Two classes as names or label integers, e.g. dog,cat or 4,9.
    #[arg(long)]
    pub pair: String,
    /// Even sample count or "all".
    #[arg(long)]
    pub size: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Recorded in the sidecar: hard or easy.
    #[arg(long)]
    pub difficulty: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GridArgs {
    /// base0, baseseq or baseres18.
    #[arg(long)]
    pub base: String,
    /// Operators such as lolo, pap:bn, sare:conv,bn, filterplacement, repeat:3.
    /// Several may follow one flag or be separated by ';'.
    #[arg(long, num_args = 1.., value_delimiter = ';')]
    pub ops: Vec<String>,
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    /// Input shape used for validation, as C,H,W.
    #[arg(long)]
    pub input: Option<String>,
    /// Grid JSON file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    /// Plan JSON naming the grid, datasets, pipeline and training config.
    #[arg(long, conflicts_with_all = ["grid", "data", "runs", "pipeline", "config"])]
    pub plan: Option<PathBuf>,
    #[arg(long, required_unless_present = "plan")]
    pub grid: Option<PathBuf>,
    /// LLDS subset files.
    #[arg(long, num_args = 1.., required_unless_present = "plan")]
    pub data: Vec<PathBuf>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long, env = "LAYERLAB_WORKERS")]
    pub workers: Option<usize>,
    /// JSON-lines run store; created if missing, resumed otherwise.
    #[arg(long)]
    pub store: PathBuf,
    /// Comma-separated steps: sharpen, blur, preprocess, upsample, scale01, torgb.
    #[arg(long)]
    pub pipeline: Option<String>,
    /// Training configuration JSON; missing fields take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub nepochs: Option<usize>,
    #[arg(long)]
    pub batchsize: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Zero timing fields so separate executions give identical stores.
    #[arg(long)]
    pub reproducible: bool,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[arg(long)]
    pub store: PathBuf,
    /// csv, md or svg.
    #[arg(long, default_value = "md")]
    pub format: String,
    /// Output directory; the report goes to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AlignArgs {
    #[arg(long)]
    pub store_a: PathBuf,
    #[arg(long)]
    pub store_b: PathBuf,
    #[arg(long, default_value_t = layerlab::orchestrator::DEFAULT_TAU)]
    pub tau: f64,
    /// Control variant; defaults to the first variant shared by both stores.
    #[arg(long)]
    pub control: Option<String>,
    /// Also render csv, md or svg into --out.
    #[arg(long, requires = "out")]
    pub format: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SelfcheckArgs {
    /// One JSON object per check instead of a table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    /// An LLDS file.
    #[arg(long, required_unless_present = "source", conflicts_with = "source")]
    pub data: Option<PathBuf>,
    /// A full dataset instead: mnist-idx, fmnist-idx or cifar-bin, with --dir.
    #[arg(long, requires = "dir")]
    pub source: Option<String>,
    #[arg(long)]
    pub dir: Option<PathBuf>,
    /// hist (bits) or gaussian (nats).
    #[arg(long, default_value = "hist")]
    pub estimator: String,
}
