//! `icl-gr`: ingest → split → mine-negatives → build-instances →
//! evaluate / sweep-shots → mine-dpo → report.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{error::ErrorKind, Parser, Subcommand, ValueEnum};

pub use commands::Failure;

#[derive(Debug, Parser)]
#[command(
    name = "icl-gr",
    version,
    about = "Context-routed generative retrieval pipeline"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub overrides: Overrides,
}

/// Flag overrides applied on top of the config file.
#[derive(Debug, Default, clap::Args)]
pub struct Overrides {
    /// TOML (or .json) run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub corpus: Option<PathBuf>,
    #[arg(long, global = true)]
    pub queries: Option<PathBuf>,
    /// Defaults to the config value, then $ICICLE_WORKDIR, then ./work.
    #[arg(long, global = true)]
    pub workdir: Option<PathBuf>,
    /// Seed of the subcommand's own randomness (split, instances or eval).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Comma-separated shot counts; a single value for evaluate and build-instances.
    #[arg(long, global = true, value_delimiter = ',')]
    pub shots: Option<Vec<usize>>,
    #[arg(long, global = true)]
    pub beam: Option<usize>,
    #[arg(long, global = true)]
    pub ratio: Option<f64>,
    #[arg(long, global = true)]
    pub k: Option<usize>,
    /// Output directory for reports.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub system: Option<SystemChoice>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SystemChoice {
    ContextRouted,
    Bm25,
    All,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate the corpus and queries and write canonical copies plus the vocabulary.
    Ingest,
    /// Split documents into training and new sets and build the training docid trie.
    Split,
    /// Mine hard negatives for every training document.
    MineNegatives,
    /// Build context-dependent and query-irrelevant instances for retention queries.
    BuildInstances,
    /// Evaluate on retention and adaptation queries at a single candidate-set size.
    Evaluate,
    /// Evaluate at each shot count.
    SweepShots,
    /// Decode the instance batch and mine preference pairs.
    MineDpo,
    /// Summarize every report in the report directory.
    Report,
}

fn emit_error(kind: &str, code: u8, message: &str) {
    let line = serde_json::json!({ "error": kind, "code": code, "message": message });
    eprintln!("{line}");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or_default();
            emit_error("usage", 2, first.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (kind, code) = commands::classify(&e);
            let message = format!("{e:#}").replace('\n', " ");
            emit_error(kind, code, &message);
            ExitCode::from(code)
        }
    }
}
