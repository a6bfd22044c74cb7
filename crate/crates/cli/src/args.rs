use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use modgap::{Method, QueryType};

#[derive(Debug, Parser)]
#[command(name = "modgap", version, about = "Calibrated multi-modal dense retrieval")]
pub struct Cli {
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// TOML file with one table per subcommand; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a store from metadata JSONL and a raw f32le block.
    Ingest(IngestArgs),
    /// Generate a synthetic benchmark with a controllable modality gap.
    GenSynth(GenSynthArgs),
    /// Top-1 item per modality for each calibration query.
    PseudoPairs(PseudoPairsArgs),
    /// Per-modality mean and standard deviation of pair scores.
    EstimateStats(EstimateStatsArgs),
    /// Rank the whole store for each query.
    Retrieve(RetrieveArgs),
    /// Recall, MRR and NDCG of one or more runs.
    Evaluate(EvaluateArgs),
    /// Diagnostics of the score distributions and embedding geometry.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub meta: PathBuf,
    #[arg(long)]
    pub vectors: PathBuf,
    /// Embedding width; inferred from the block size when omitted.
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenSynthArgs {
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long, default_value_t = 2000)]
    pub n_text: usize,
    #[arg(long, default_value_t = 2000)]
    pub n_image: usize,
    #[arg(long, default_value_t = 200)]
    pub n_queries: usize,
    /// Norm of the offset shared by text items and queries.
    #[arg(long, default_value_t = 2.0)]
    pub gap: f64,
    #[arg(long, default_value_t = 0.5)]
    pub noise: f64,
    /// Share of evaluation queries that target an image.
    #[arg(long, default_value_t = 0.5)]
    pub image_query_ratio: f64,
    #[arg(long, default_value_t = 200)]
    pub n_calib_queries: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PseudoPairsArgs {
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SourceArg {
    Pseudo,
    Labeled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VarianceArg {
    /// Divide by N.
    Population,
    /// Divide by N - 1.
    Sample,
}

#[derive(Debug, Args)]
pub struct EstimateStatsArgs {
    /// Pair file from `pseudo-pairs` (pseudo source).
    #[arg(long, required_if_eq("source", "pseudo"), conflicts_with = "qrels")]
    pub pairs: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub source: SourceArg,
    #[arg(long)]
    pub store: PathBuf,
    /// Gold pairs (labeled source).
    #[arg(long, required_if_eq("source", "labeled"))]
    pub qrels: Option<PathBuf>,
    /// Query set; required for labeled stats, and re-checks pseudo pairs when given.
    #[arg(long, required_if_eq("source", "labeled"))]
    pub queries: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = VarianceArg::Population)]
    pub variance: VarianceArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long, requires_if("std", "stats"))]
    pub method: Method,
    #[arg(long)]
    pub stats: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub k: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RecallModeArg {
    Fraction,
    AnyHit,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Run file, optionally labelled as `label=path`. Repeatable.
    #[arg(long, required = true)]
    pub run: Vec<String>,
    #[arg(long)]
    pub qrels: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,5,20,100")]
    pub k: Vec<usize>,
    /// Query set supplying TextQ/ImageQ labels for the per-type blocks.
    #[arg(long)]
    pub queries: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = RecallModeArg::Fraction)]
    pub recall_mode: RecallModeArg,
    /// JSON report; a text table is written next to it with a `.txt` extension.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(subcommand)]
    pub kind: AnalyzeKind,
}

#[derive(Debug, Subcommand)]
pub enum AnalyzeKind {
    /// Skewness of each query's score distribution per modality.
    Skewness(SkewnessArgs),
    /// Histogram of mean standardized image minus text scores.
    Gap(GapArgs),
    /// 2-D SVD projection of queries and their positives.
    Svd(SvdArgs),
}

#[derive(Debug, Args)]
pub struct SkewnessArgs {
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub qtype: Option<QueryType>,
    /// Also write a flat CSV next to the JSON output.
    #[arg(long)]
    pub csv: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GapArgs {
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub stats: PathBuf,
    #[arg(long)]
    pub qtype: Option<QueryType>,
    #[arg(long, default_value_t = modgap::analysis::DEFAULT_GAP_BINS)]
    pub bins: usize,
    #[arg(long, default_value_t = modgap::analysis::DEFAULT_GAP_RANGE.0, allow_negative_numbers = true)]
    pub lo: f64,
    #[arg(long, default_value_t = modgap::analysis::DEFAULT_GAP_RANGE.1, allow_negative_numbers = true)]
    pub hi: f64,
    #[arg(long)]
    pub csv: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SvdArgs {
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub qrels: PathBuf,
    #[arg(long)]
    pub qtype: Option<QueryType>,
    /// Keep only the first N queries (in id order).
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long)]
    pub csv: bool,
    #[arg(long)]
    pub out: PathBuf,
}
