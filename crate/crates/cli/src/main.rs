//! `mtmn`: train, evaluate, tag and inspect multi-task memory network models.
//!
//! Exit status is 0 on success, 1 on runtime failures (including a failed
//! gradient check) and 2 on usage or configuration errors.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::RunArgs;

#[derive(Parser)]
#[command(name = "mtmn", version, about = "Category-specific aspect and opinion term co-extraction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a checkpoint plus a per-epoch loss log.
    Train(RunArgs),
    /// Score a checkpoint on an annotated corpus.
    Eval(EvalArgs),
    /// Tag raw sentences, one whitespace-tokenized sentence per line.
    Tag(TagArgs),
    /// Dump per-category attention scores and task similarities.
    InspectAttention(InspectArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Train once per factor rank and tabulate F1 against it.
    SweepM(SweepArgs),
}

#[derive(Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Score the gold annotations themselves instead of a checkpoint.
    #[arg(long, hide = true)]
    pub gold_oracle: bool,
}

#[derive(Args)]
pub struct TagArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Text file with one sentence per line.
    #[arg(long)]
    pub input: Option<PathBuf>,
}

#[derive(Args)]
pub struct InspectArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Only dump these sentence ids.
    #[arg(long = "sentence")]
    pub sentences: Vec<String>,
    /// Dump at most this many sentences.
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Args)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Embedding size for the built-in synthetic vectors.
    #[arg(long, default_value_t = 8)]
    pub embed_dim: usize,
    /// Check at most this many scalars per parameter.
    #[arg(long)]
    pub max_per_param: Option<usize>,
    /// Add 1 to one entry of this parameter's analytic gradient.
    #[arg(long, value_name = "PARAM")]
    pub corrupt_gradient: Option<String>,
}

#[derive(Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Comma-separated factor ranks, e.g. `2,5,8`.
    #[arg(long)]
    pub m_list: Option<String>,
}

/// Why a command stopped.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<mtmn::Error> for Failure {
    fn from(e: mtmn::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(args) => commands::train(args),
        Command::Eval(args) => commands::eval(args),
        Command::Tag(args) => commands::tag(args),
        Command::InspectAttention(args) => commands::inspect_attention(args),
        Command::Gradcheck(args) => commands::gradcheck(args),
        Command::SweepM(args) => commands::sweep_m(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(err)) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}
