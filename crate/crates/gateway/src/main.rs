mod commands;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "juree", version, about = "Risk-taxonomy guardrail toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP gateway.
    Serve {
        #[arg(long)]
        config: PathBuf,
        /// Override the bind address from the config.
        #[arg(long)]
        bind: Option<String>,
    },
    /// Score a labelled dataset and report metrics as JSON.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "reference")]
        backend: String,
        #[arg(long)]
        taxonomy: Option<PathBuf>,
        #[arg(long, default_value_t = 128)]
        batch_size: usize,
        /// Also write the flat metric CSV here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Generate synthetic candidates from recipes.
    Gen {
        #[arg(long)]
        recipe: PathBuf,
        #[arg(long)]
        n: usize,
        /// Overrides every recipe's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Exemplar pool (dataset JSONL).
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        retry_budget: u32,
        #[command(flatten)]
        chat: ChatArgs,
    },
    /// Apply one filter stage to a candidate file.
    Filter {
        #[arg(long, value_enum)]
        stage: Stage,
        #[arg(long = "in")]
        input: PathBuf,
        /// Seed dataset; required for the distance stage.
        #[arg(long)]
        seeds: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-candidate filter report (JSONL).
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, default_value_t = 0.15)]
        tau_keep: f64,
        #[arg(long, default_value_t = 0.85)]
        tau_conflict: f64,
        #[command(flatten)]
        chat: ChatArgs,
    },
    /// Build the uncertainty review queue from kept candidates.
    Triage {
        #[arg(long)]
        k: usize,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "reference")]
        backend: String,
        #[arg(long, default_value_t = 0.2)]
        margin: f64,
        #[arg(long)]
        taxonomy: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time a backend over a dataset.
    Bench {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        batch_size: usize,
        #[arg(long, default_value = "reference")]
        backend: String,
        #[arg(long, default_value_t = 2)]
        warmup: usize,
        /// Cycle the dataset this many times.
        #[arg(long, default_value_t = 1)]
        repeat: usize,
        #[arg(long)]
        batches_csv: Option<PathBuf>,
    },
    /// Stratified train/test split.
    Split {
        #[arg(long)]
        test_frac: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
    },
    /// Turn raw {text, label, origin} rows into a dataset.
    Ingest {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        taxonomy: Option<PathBuf>,
    },
    /// One full round: generate, filter, triage; writes a run directory.
    Round {
        #[arg(long)]
        seeds: PathBuf,
        #[arg(long)]
        recipe: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "reference")]
        backend: String,
        #[arg(long, default_value_t = 0.2)]
        margin: f64,
        #[arg(long, default_value_t = 200)]
        k: usize,
        #[command(flatten)]
        chat: ChatArgs,
    },
    /// Classify a labelled dataset with an LLM judge and report metrics.
    Judge {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum, default_value_t = JudgeKind::ZeroShot)]
        mode: JudgeKind,
        /// {text, label} JSONL; required for few-shot.
        #[arg(long)]
        exemplars: Option<PathBuf>,
        #[arg(long)]
        taxonomy: Option<PathBuf>,
        #[command(flatten)]
        chat: ChatArgs,
    },
    /// Make augmented copies of a dataset.
    Augment {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        op: String,
        #[arg(long, default_value_t = 0.1)]
        p: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write reference embeddings as CSV for external plotting.
    ExportEmbeddings {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Stage {
    Roundtrip,
    Distance,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum JudgeKind {
    ZeroShot,
    FewShot,
    Multi,
}

#[derive(Args)]
struct ChatArgs {
    /// Use the offline lexicon chat model instead of the HTTP endpoint.
    #[arg(long)]
    stub: bool,
    #[arg(long, default_value = "gpt-3.5-turbo")]
    model: String,
    /// Append every prompt and response to this JSONL file.
    #[arg(long)]
    audit_log: Option<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    let default_level = if matches!(cli.command, Command::Serve { .. }) { "info" } else { "warn" };
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(default_level)))
        .with_writer(std::io::stderr)
        .init();
    if let Err(e) = commands::run(cli.command) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
