use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use pace_core::ingest::{DEFAULT_MIN_DAILY_STREAMS, DEFAULT_MIN_LISTEN_SECS};
use pace_core::MatrixFormat;
use serde::Serialize;

pub const DEFAULT_SEED: u64 = 7;

/// Weekly listening-pattern dictionaries: synthesize, ingest, learn and
/// evaluate. Every random choice derives from `--seed`.
#[derive(Debug, Parser)]
#[command(name = "pace", version, about, propagate_version = true)]
pub struct Cli {
    /// Worker threads; 1 runs every stage sequentially. Defaults to all cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic events, favorites and activity labels.
    Synth(SynthArgs),
    /// Parse and filter events and favorites into per-user summaries.
    Ingest(IngestArgs),
    /// Build normalized weekly signals from ingested data.
    Signals(SignalsArgs),
    /// Split users and learn a dictionary on the training rows.
    Learn(LearnArgs),
    /// Sparse-code signals against a learned dictionary.
    Embed(EmbedArgs),
    /// Score feature variants on the activity-prediction tasks.
    Eval(EvalArgs),
    /// Write dictionary atoms as a long `atom,channel,slot,value` CSV.
    ExportAtoms(ExportAtomsArgs),
    /// Run every stage with one seed.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthOptions {
    /// TOML generator config; unset keys take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config's user count.
    #[arg(long)]
    pub users: Option<usize>,
    /// Overrides the config's number of weeks.
    #[arg(long)]
    pub weeks: Option<usize>,
    /// Overrides the config's noise level in [0, 1].
    #[arg(long)]
    pub noise: Option<f64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    #[command(flatten)]
    pub synth: SynthOptions,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Output directory for events.csv, favorites.csv and labels.csv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct IngestOptions {
    /// Streams shorter than this many seconds are dropped.
    #[arg(long, default_value_t = DEFAULT_MIN_LISTEN_SECS)]
    pub min_listen_secs: u32,
    /// Users averaging fewer valid streams per day are dropped.
    #[arg(long, default_value_t = DEFAULT_MIN_DAILY_STREAMS)]
    pub min_daily_streams: f64,
    /// Study period start (UTC epoch seconds); defaults to the first event.
    #[arg(long)]
    pub period_start: Option<i64>,
    /// Study period end, exclusive; defaults to one second past the last event.
    #[arg(long)]
    pub period_end: Option<i64>,
    /// Offset used for events without a timezone column value.
    #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
    pub default_tz_offset_min: i32,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct IngestArgs {
    #[arg(long)]
    pub events: PathBuf,
    #[arg(long)]
    pub favorites: PathBuf,
    #[command(flatten)]
    pub options: IngestOptions,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SignalsArgs {
    /// Directory written by `ingest`.
    #[arg(long)]
    pub ingest: PathBuf,
    /// Output stem: writes <stem>.users.txt and <stem>.csv or .bin.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "csv")]
    pub format: MatrixFormat,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct LearnOptions {
    /// Number of atoms K.
    #[arg(long, default_value_t = pace_core::dictionary::DEFAULT_ATOMS)]
    pub atoms: usize,
    /// L1 penalty on codes.
    #[arg(long, default_value_t = pace_core::dictionary::DEFAULT_LAMBDA)]
    pub lambda: f64,
    /// Alternating coding/update iterations.
    #[arg(long, default_value_t = 100)]
    pub iters: usize,
    /// Share of users held out from dictionary learning.
    #[arg(long, default_value_t = pace_core::evaluate::DEFAULT_TEST_FRACTION)]
    pub test_frac: f64,
    /// Coordinate-descent stopping tolerance.
    #[arg(long, default_value_t = 1e-8)]
    pub lasso_tol: f64,
    /// Coordinate-descent sweep cap.
    #[arg(long, default_value_t = 1000)]
    pub lasso_max_sweeps: usize,
    /// Replace atoms no code uses after an update.
    #[arg(long)]
    pub reseed_unused: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct LearnArgs {
    /// Signal set stem written by `signals`.
    #[arg(long)]
    pub signals: PathBuf,
    /// Reuse an existing split instead of drawing one.
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[command(flatten)]
    pub options: LearnOptions,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long, default_value = "csv")]
    pub format: MatrixFormat,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EmbedArgs {
    /// Signal set stem.
    #[arg(long)]
    pub signals: PathBuf,
    /// Dictionary file (.csv or .bin).
    #[arg(long)]
    pub dictionary: PathBuf,
    #[arg(long, default_value_t = 1e-8)]
    pub lasso_tol: f64,
    #[arg(long, default_value_t = 1000)]
    pub lasso_max_sweeps: usize,
    #[arg(long, default_value = "csv")]
    pub format: MatrixFormat,
    /// Output stem for the codes.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalOptions {
    /// Cross-validation folds.
    #[arg(long, default_value_t = pace_core::evaluate::DEFAULT_FOLDS)]
    pub folds: usize,
    /// Comma-separated L2 penalty grid.
    #[arg(long, value_delimiter = ',', default_value = "0.01,0.1,1,10,100")]
    pub l2_grid: Vec<f64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalArgs {
    /// Code stem written by `embed`.
    #[arg(long)]
    pub codes: PathBuf,
    /// Activity labels CSV.
    #[arg(long)]
    pub labels: PathBuf,
    /// Split CSV written by `learn`.
    #[arg(long)]
    pub split: PathBuf,
    /// user_summary.csv written by `ingest`.
    #[arg(long)]
    pub user_summary: PathBuf,
    #[command(flatten)]
    pub options: EvalOptions,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ExportAtomsArgs {
    #[arg(long)]
    pub dictionary: PathBuf,
    /// Output CSV path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PipelineArgs {
    /// Existing events CSV; when absent, data is synthesized.
    #[arg(long, requires_all = ["favorites", "labels"])]
    pub events: Option<PathBuf>,
    #[arg(long)]
    pub favorites: Option<PathBuf>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[command(flatten)]
    pub synth: SynthOptions,
    #[command(flatten)]
    pub ingest: IngestOptions,
    #[command(flatten)]
    pub learn: LearnOptions,
    #[command(flatten)]
    pub eval: EvalOptions,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long, default_value = "csv")]
    pub format: MatrixFormat,
    /// Output directory; one subdirectory per stage.
    #[arg(long)]
    pub out: PathBuf,
}
