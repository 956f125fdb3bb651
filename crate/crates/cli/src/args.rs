use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

#[derive(Debug, Parser)]
#[command(
    name = "xfnl",
    version,
    about = "Label financial numerals with XBRL tags"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Label every test-split numeral of a corpus and evaluate.
    Run(Box<RunArgs>),
    /// Serve single-sentence tagging and the review workflow over HTTP.
    Serve(ServeArgs),
    /// Build review tasks or compute annotator agreement.
    #[command(subcommand)]
    Review(ReviewCommand),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    Instruct,
    Plain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetArg {
    Doc,
    Tagwords,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenTestArg {
    Oracle,
    Corrupt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ClassSetArg {
    Gold,
    Taxonomy,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub taxonomy: PathBuf,
    #[arg(long)]
    pub instruction_file: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "instruct")]
    pub mode: ModeArg,
    #[arg(long, value_enum, default_value = "doc")]
    pub target: TargetArg,

    /// Generation service base URL [env: XFNL_GEN_URL]
    #[arg(long, conflicts_with = "gen_test")]
    pub gen_url: Option<String>,
    #[arg(long, value_enum)]
    pub gen_test: Option<GenTestArg>,
    /// Word deletion rate of the corrupting test generator.
    #[arg(long, default_value_t = 0.2)]
    pub corrupt_rate: f64,
    /// Word substitution rate of the corrupting test generator.
    #[arg(long, default_value_t = 0.0)]
    pub substitute_rate: f64,
    /// Seed for the test backends.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Embedding service base URL [env: XFNL_EMBED_URL]
    #[arg(long, conflicts_with = "embed_test")]
    pub embed_url: Option<String>,
    #[arg(long)]
    pub embed_test: bool,
    /// Test embedder dimension.
    #[arg(long, default_value_t = 1024)]
    pub dim: usize,
    /// Line-delimited {"tag", "vector"} file used instead of embedding the taxonomy.
    #[arg(long)]
    pub embed_precomputed: Option<PathBuf>,

    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 30)]
    pub max_new_tokens: u32,
    /// Upper edges of the train-frequency buckets.
    #[arg(long, default_value = "5,10,50,100")]
    pub bucket_edges: String,
    #[arg(long, value_enum, default_value = "gold")]
    pub class_set: ClassSetArg,
    /// Leave `others` out of the macro averages.
    #[arg(long)]
    pub exclude_others_macro: bool,
    /// Leave `others` examples out of Hits@k.
    #[arg(long)]
    pub exclude_others_hits: bool,

    #[arg(long)]
    pub report_out: Option<PathBuf>,
    #[arg(long)]
    pub index_cache: Option<PathBuf>,
    #[arg(long)]
    pub artifacts_dir: Option<PathBuf>,
    #[arg(long)]
    pub journal: Option<PathBuf>,
    /// Skip mentions already recorded in the journal.
    #[arg(long)]
    pub resume: bool,
    #[arg(long, default_value_t = 8)]
    pub concurrency: usize,
    /// Largest tolerated fraction of failed mentions.
    #[arg(long, default_value_t = 0.05)]
    pub failure_threshold: f64,
    /// Give up retrying a request after this many seconds.
    #[arg(long)]
    pub retry_deadline_secs: Option<u64>,
    /// Print the report as JSON instead of a table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
}

#[derive(Debug, Subcommand)]
pub enum ReviewCommand {
    /// Turn pipeline predictions into review tasks.
    Build {
        /// predictions.jsonl from a run's artifacts directory.
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        taxonomy: PathBuf,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Agreement report over annotations.
    Report {
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}
