//! Command-line front end: ingest → cluster → update → search → eval over a
//! persisted workspace directory.

mod commands;
mod workspace;

use std::fmt;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

/// An error carrying the process exit code: 2 for usage and workspace-state
/// problems, 3 for malformed data files.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn state(message: impl Into<String>) -> Self {
        CliError { code: 2, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        CliError { code: 3, message: message.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

#[derive(Parser)]
#[command(
    name = "cluspr",
    version,
    about = "Topic clustering and pruned search over a sealed inverted index"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Seal a corpus directory into the workspace's inverted index.
    Ingest {
        /// Workspace directory (created if missing).
        #[arg(long)]
        workspace: PathBuf,
        /// Directory of UTF-8 text files, one document per file.
        #[arg(long)]
        corpus: PathBuf,
        /// Keep the n most frequent tokens of each document.
        #[arg(long)]
        tokens_per_doc: Option<usize>,
        /// Path to the 32-byte sealing key file; remembered in the config.
        #[arg(long)]
        key: Option<PathBuf>,
        /// Path to the word-vector model file; remembered in the config.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Cluster the indexed tokens and write cluster + abstract manifests.
    Cluster {
        #[arg(long)]
        workspace: PathBuf,
        /// Keep every token instead of trimming below-mean ones.
        #[arg(long)]
        no_trim: bool,
        /// Use this cluster count instead of the estimate.
        #[arg(long)]
        k_override: Option<usize>,
        /// Abstract size (words per cluster summary).
        #[arg(long)]
        alpha: Option<usize>,
    },
    /// Fold a batch directory of new documents into the clustering.
    Update {
        #[arg(long)]
        workspace: PathBuf,
        /// Directory of new documents.
        #[arg(long)]
        batch: PathBuf,
    },
    /// Search the clustered index with a plaintext query.
    Search {
        #[arg(long)]
        workspace: PathBuf,
        /// Query words.
        #[arg(required = true, num_args = 1..)]
        query: Vec<String>,
        /// Number of clusters to search after pruning.
        #[arg(long)]
        top_p: Option<usize>,
        /// Maximum number of results.
        #[arg(long)]
        cutoff: Option<usize>,
    },
    /// Report clustering quality, search quality, or run the batch experiment.
    Eval {
        #[arg(long)]
        workspace: PathBuf,
        /// Relevance judgments: `<query>\t<doc-id>\t<0|1>` per line.
        #[arg(long)]
        qrels: Option<PathBuf>,
        /// Batch-experiment plan file (`key=value` lines).
        #[arg(long)]
        plan: Option<PathBuf>,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Ingest { workspace, corpus, tokens_per_doc, key, model } => {
            commands::cmd_ingest(&workspace, &corpus, tokens_per_doc, key, model)
        }
        Command::Cluster { workspace, no_trim, k_override, alpha } => {
            commands::cmd_cluster(&workspace, no_trim, k_override, alpha)
        }
        Command::Update { workspace, batch } => commands::cmd_update(&workspace, &batch),
        Command::Search { workspace, query, top_p, cutoff } => {
            commands::cmd_search(&workspace, &query.join(" "), top_p, cutoff)
        }
        Command::Eval { workspace, qrels, plan, out } => {
            commands::cmd_eval(&workspace, qrels.as_deref(), plan.as_deref(), out.as_deref())
        }
    }
}

fn main() {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.code);
        }
    }
}
