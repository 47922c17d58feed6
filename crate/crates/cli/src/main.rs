use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

#[derive(Parser, Debug)]
#[command(name = "datapick", version, about = "Rank pretraining data recipes from small-scale experiments")]
struct Cli {
    /// Worker threads for fits and metric aggregation (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check a manifest and report which runs are present in a record set.
    Validate(ValidateArgs),
    /// Turn per-item log-likelihood records into metric points.
    Metrics(MetricsArgs),
    /// Fit scaling-law chains per recipe, task, variant and size subset.
    Fit(FitArgs),
    /// Single-scale predictions: rank recipes at small-scale checkpoints.
    Rank(RankArgs),
    /// Score predictions and fits against the target-scale ranking.
    Decide(DecideArgs),
    /// Compute-accuracy frontier of a decision table, as CSV and SVG.
    Frontier(FrontierArgs),
    /// Seed noise and recipe spread per task, metric and size.
    Analyze(AnalyzeArgs),
    /// Generate a suite from the ground truths in a manifest.
    Simulate(SimulateArgs),
}

#[derive(Args, Debug)]
pub(crate) struct Common {
    /// Suite manifest (TOML).
    #[arg(long)]
    manifest: PathBuf,
    /// Tasks to macro-average over, comma separated (default: the manifest's target tasks).
    #[arg(long, value_delimiter = ',')]
    tasks: Vec<String>,
    /// Proxy metric to predict with (default: the manifest's target metric).
    #[arg(long)]
    metric: Option<String>,
}

#[derive(Args, Debug)]
pub(crate) struct ValidateArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Item records (JSON lines).
    #[arg(long, conflicts_with = "points")]
    records: Option<PathBuf>,
    /// Metric points (CSV).
    #[arg(long)]
    points: Option<PathBuf>,
    /// Fail when any run is truncated or absent.
    #[arg(long)]
    strict: bool,
}

#[derive(Args, Debug)]
pub(crate) struct MetricsArgs {
    #[arg(long)]
    records: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Metrics to compute (default: all 15).
    #[arg(long = "metric", value_delimiter = ',')]
    metrics: Vec<String>,
}

#[derive(Args, Debug)]
pub(crate) struct FitArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    points: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Variants to fit (default: all 8).
    #[arg(long = "variant", value_delimiter = ',')]
    variants: Vec<String>,
    /// Size subsets such as prefix:5 (default: every prefix and suffix subset).
    #[arg(long = "subset", value_delimiter = ',')]
    subsets: Vec<String>,
    /// Build subsets from the ladder without the target size.
    #[arg(long)]
    exclude_target: bool,
}

#[derive(Args, Debug)]
pub(crate) struct RankArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    points: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Sizes to rank at (default: every size below the target).
    #[arg(long = "size", value_delimiter = ',')]
    sizes: Vec<String>,
    /// Checkpoint step (default: the final training step of each size).
    #[arg(long, conflicts_with = "all_checkpoints")]
    step: Option<u64>,
    /// One prediction per checkpoint logged for the default seed.
    #[arg(long)]
    all_checkpoints: bool,
}

#[derive(Args, Debug)]
pub(crate) struct DecideArgs {
    #[command(flatten)]
    common: Common,
    /// Metric points holding the target-size results.
    #[arg(long)]
    points: PathBuf,
    /// Single-scale predictions written by `rank`.
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Fits written by `fit`.
    #[arg(long)]
    fits: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Use non-converged fits instead of skipping them.
    #[arg(long)]
    best_effort: bool,
    /// Metric of the target-scale ranking (default: the manifest's target metric).
    #[arg(long)]
    gold_metric: Option<String>,
}

#[derive(Args, Debug)]
pub(crate) struct FrontierArgs {
    /// Decision table written by `decide`.
    #[arg(long)]
    decisions: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Name used in the output file names.
    #[arg(long, default_value = "all")]
    task: String,
}

#[derive(Args, Debug)]
pub(crate) struct AnalyzeArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    points: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Extra metrics beyond --metric, comma separated.
    #[arg(long = "also", value_delimiter = ',')]
    extra_metrics: Vec<String>,
    /// Sizes to analyze (default: all).
    #[arg(long = "size", value_delimiter = ',')]
    sizes: Vec<String>,
}

#[derive(Args, Debug)]
pub(crate) struct SimulateArgs {
    /// Manifest with a [synthetic] section.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 0)]
    rng_seed: u64,
    /// Metric points (CSV).
    #[arg(long)]
    out: PathBuf,
    /// Also write item records (JSON lines).
    #[arg(long)]
    records_out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::Validate(a) => commands::validate(a),
        Command::Metrics(a) => commands::metrics(a),
        Command::Fit(a) => commands::fit(a),
        Command::Rank(a) => commands::rank(a),
        Command::Decide(a) => commands::decide(a),
        Command::Frontier(a) => commands::frontier(a),
        Command::Analyze(a) => commands::analyze(a),
        Command::Simulate(a) => commands::simulate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
