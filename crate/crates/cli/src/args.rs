//! Command-line surface.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use latnas::supernet::Strategy;

#[derive(Debug, Parser)]
#[command(name = "latnas", version, about = "Latency-constrained one-shot architecture search")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Count downsampling paths and search-space cardinalities.
    Count(CountArgs),
    /// Train a supernet store and write its checkpoint.
    Train(TrainArgs),
    /// Search a trained store for the best architecture under a latency budget.
    Search(SearchArgs),
    /// Rank-correlate supernet estimates with stand-alone quality per strategy.
    Correlate(CorrelateArgs),
    /// Compare search methods over several seeds on the synthetic benchmark.
    Bench(BenchArgs),
    /// Rerun the command recorded in a manifest and compare its outputs.
    Replay(ReplayArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Count(_) => "count",
            Command::Train(_) => "train",
            Command::Search(_) => "search",
            Command::Correlate(_) => "correlate",
            Command::Bench(_) => "bench",
            Command::Replay(_) => "replay",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EvaluatorSpec {
    Synthetic,
    External(String),
}

fn parse_evaluator(s: &str) -> Result<EvaluatorSpec, String> {
    if s == "synthetic" {
        return Ok(EvaluatorSpec::Synthetic);
    }
    match s.strip_prefix("external:") {
        Some(cmd) if !cmd.trim().is_empty() => Ok(EvaluatorSpec::External(cmd.to_string())),
        _ => Err("expected `synthetic` or `external:<command>`".into()),
    }
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.parse()
}

fn parse_budget(s: &str) -> Result<f64, String> {
    match s {
        "inf" | "none" => Ok(f64::INFINITY),
        _ => match s.parse::<f64>() {
            Ok(v) if v >= 0.0 => Ok(v),
            _ => Err("expected a non-negative number of milliseconds or `inf`".into()),
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Ngd,
    Ea,
    Random,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Ngd => "ngd",
            Method::Ea => "ea",
            Method::Random => "random",
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ConfigOpt {
    /// Preset name (`default`, `handwriting`, `scene`) or path to a JSON config.
    #[arg(long, default_value = "default")]
    pub config: String,
}

#[derive(Debug, Clone, Args)]
pub struct RunOpts {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Upper bound on worker threads.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluatorOpts {
    /// `synthetic` or `external:<command>`.
    #[arg(long, default_value = "synthetic", value_parser = parse_evaluator)]
    pub evaluator: EvaluatorSpec,
    /// Per-request timeout of an external evaluator.
    #[arg(long, default_value_t = 30_000)]
    pub eval_timeout_ms: u64,
}

#[derive(Debug, Clone, Args)]
pub struct BenchmarkOpts {
    /// Standard deviation of the synthetic training signal.
    #[arg(long, default_value_t = 0.05)]
    pub noise_sigma: f64,
    /// Weight of adjacent-edge interactions in the synthetic benchmark.
    #[arg(long, default_value_t = 0.02)]
    pub interaction_weight: f64,
}

#[derive(Debug, Clone, Args)]
pub struct TrainOpts {
    #[arg(long, default_value = "random_path", value_parser = parse_strategy)]
    pub strategy: Strategy,
    /// Number of blocks K, the last one holding the transformer layers.
    #[arg(long, default_value_t = 5)]
    pub blocks: usize,
    /// Lookup-table candidates per block for best-path training.
    #[arg(long, default_value_t = 2000)]
    pub lookup_samples: usize,
}

#[derive(Debug, Clone, Args)]
pub struct SearchOpts {
    /// Latency budget in milliseconds; `inf` for none.
    #[arg(long, default_value = "inf", value_parser = parse_budget)]
    pub r_max_ms: f64,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.1)]
    pub rho: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub damping: f64,
    /// Subtract the batch-mean reward before the natural-gradient step.
    #[arg(long)]
    pub baseline: bool,
    /// Give over-budget samples zero reward in the natural-gradient step.
    #[arg(long)]
    pub zero_infeasible: bool,
    #[arg(long, default_value_t = 16)]
    pub population: usize,
    #[arg(long, default_value_t = 0.1)]
    pub mutation_rate: f64,
    /// Latency table CSV; synthesised from `--latency-seed` when absent.
    #[arg(long)]
    pub latency_table: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub latency_seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct CountArgs {
    #[command(flatten)]
    pub config: ConfigOpt,
    /// Run directory; when given, the counts and a manifest are written there.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigOpt,
    #[command(flatten)]
    pub run: RunOpts,
    #[command(flatten)]
    pub train: TrainOpts,
    /// Iterations per block T.
    #[arg(long, default_value_t = 1000)]
    pub iters: u64,
    #[command(flatten)]
    pub evaluator: EvaluatorOpts,
    #[command(flatten)]
    pub bench: BenchmarkOpts,
    /// Seed of the synthetic benchmark; defaults to `--seed`.
    #[arg(long)]
    pub bench_seed: Option<u64>,
    /// Continue from a checkpoint instead of starting fresh.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Rewrite the checkpoint every this many steps.
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SearchArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum, default_value = "ngd")]
    pub method: Method,
    #[command(flatten)]
    pub run: RunOpts,
    #[command(flatten)]
    pub search: SearchOpts,
    /// Search iterations T; the evaluation budget is `iters * batch`.
    #[arg(long, default_value_t = 50)]
    pub iters: usize,
    #[command(flatten)]
    pub evaluator: EvaluatorOpts,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct CorrelateArgs {
    #[command(flatten)]
    pub config: ConfigOpt,
    #[command(flatten)]
    pub run: RunOpts,
    /// Comma-separated strategies; all four when absent.
    #[arg(long, value_delimiter = ',', value_parser = parse_strategy)]
    pub strategies: Vec<Strategy>,
    /// Explicit seeds; otherwise `--n-seeds` consecutive seeds from `--seed`.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    #[arg(long, default_value_t = 5)]
    pub n_seeds: u64,
    #[arg(long, default_value_t = 5)]
    pub blocks: usize,
    /// Iterations per block; SPOS gets `blocks` times as many.
    #[arg(long, default_value_t = 2000)]
    pub iters: u64,
    #[arg(long, default_value_t = 2000)]
    pub lookup_samples: usize,
    #[arg(long, default_value_t = 70)]
    pub n_archs: usize,
    #[command(flatten)]
    pub bench: BenchmarkOpts,
    /// Noise on the stand-alone quality of each sampled architecture.
    #[arg(long, default_value_t = 0.01)]
    pub standalone_sigma: f64,
    #[command(flatten)]
    pub evaluator: EvaluatorOpts,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub config: ConfigOpt,
    #[command(flatten)]
    pub run: RunOpts,
    /// Comma-separated search methods.
    #[arg(long, value_delimiter = ',', value_enum, default_value = "ngd,ea,random")]
    pub methods: Vec<Method>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    #[arg(long, default_value_t = 5)]
    pub n_seeds: u64,
    #[command(flatten)]
    pub train: TrainOpts,
    /// Supernet iterations per block.
    #[arg(long, default_value_t = 2000)]
    pub train_iters: u64,
    #[command(flatten)]
    pub bench: BenchmarkOpts,
    #[command(flatten)]
    pub search: SearchOpts,
    /// Search iterations T.
    #[arg(long, default_value_t = 50)]
    pub iters: usize,
    /// Size of the top set summarised by the convergence curves.
    #[arg(long, default_value_t = 5)]
    pub top: usize,
    #[command(flatten)]
    pub evaluator: EvaluatorOpts,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Run directory of the rerun.
    #[arg(long)]
    pub out: PathBuf,
}
