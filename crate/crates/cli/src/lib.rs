//! Command surface of the `edu4fd` binary: argument definitions, run
//! configuration and the six subcommands.

pub mod commands;
pub mod config;
pub mod error;

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use edu4fd::discourse::GraphMode;
use edu4fd::parallel::Execution;
use edu4fd::segmenter::SegmentMode;
use serde::Serialize;

pub use config::RunConfig;
pub use error::{CliError, Failure};

#[derive(Debug, Parser)]
#[command(name = "edu4fd", version, about = "EDU-structure fake news classifier")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GlobalArgs {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed and EDU4FD_SEED.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory, or output file for `segment` and `graph`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Only log warnings and errors.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    /// Scheduling of per-document work. Results are identical either way.
    #[arg(long, global = true, default_value = "parallel")]
    pub execution: Execution,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Split documents into EDUs and write them to the `edus` field.
    Segment(SegmentArgs),
    /// Build or validate dependency graphs over the EDUs.
    Graph(GraphArgs),
    /// Print corpus and relation statistics.
    Stats(StatsArgs),
    /// Train a model from `--config` and write a checkpoint.
    Train,
    /// Evaluate a checkpoint on held-out corpora.
    Eval(EvalArgs),
    /// Train and evaluate every ablation variant.
    Ablate,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Segment(_) => "segment",
            Command::Graph(_) => "graph",
            Command::Stats(_) => "stats",
            Command::Train => "train",
            Command::Eval(_) => "eval",
            Command::Ablate => "ablate",
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SegmentArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "gold")]
    pub mode: SegmentMode,
    #[arg(long, default_value_t = 200)]
    pub max_edu_len: usize,
    /// Cue lexicon (TSV) replacing the bundled one in rule mode.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GraphArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "provided")]
    pub mode: GraphMode,
    /// Count inverse channels in the channel summary.
    #[arg(long)]
    pub inverse: bool,
    /// Count self-loop channels in the channel summary.
    #[arg(long = "self")]
    pub self_loops: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct StatsArgs {
    #[arg(long)]
    pub input: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Test corpora. Defaults to the test sets of the stored run config.
    #[arg(long = "test")]
    pub tests: Vec<PathBuf>,
    /// Trial 0 is the checkpoint; later trials retrain with seed + i.
    #[arg(long, default_value_t = 1)]
    pub trials: usize,
    /// Write text vectors of every test document as TSV.
    #[arg(long)]
    pub export_embeddings: Option<PathBuf>,
    /// Write attention weights of one document to `attention.json`.
    #[arg(long)]
    pub export_attention: Option<String>,
}

/// Runs a parsed command. Tables and summaries go to `stdout`.
pub fn run(cli: &Cli, stdout: &mut dyn Write) -> Result<(), CliError> {
    let g = &cli.global;
    match &cli.command {
        Command::Segment(a) => commands::segment(g, a, stdout),
        Command::Graph(a) => commands::graph(g, a, stdout),
        Command::Stats(a) => commands::stats(g, a, stdout),
        Command::Train => commands::train(g, stdout),
        Command::Eval(a) => commands::eval(g, a, stdout),
        Command::Ablate => commands::ablate(g, stdout),
    }
}
