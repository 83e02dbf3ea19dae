//! `sembed` command-line front end.

pub mod commands;
pub mod config;
pub mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sembed_core::{PoolingStrategy, TrainSetup};
use thiserror::Error;

pub const SEED_ENV: &str = "SEMBED_SEED";

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, config or inputs that fail validation.
    #[error("{0}")]
    Usage(String),
    /// Everything that goes wrong once work has started.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "sembed", version, about = "Train and benchmark siamese sentence embeddings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct CommonArgs {
    /// key = value configuration file
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one config key (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    /// Root seed; falls back to the config file, then SEMBED_SEED, then 0
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train an encoder with one of the three setups
    Train(TrainArgs),
    /// Score an encoder checkpoint or word vectors on one benchmark
    Eval(EvalArgs),
    /// Per-pair cosine tables
    #[command(subcommand)]
    Report(ReportCommand),
    /// Evaluate every manifest row on every dataset and print one table
    Compare(CompareArgs),
    /// Write a seeded synthetic corpus as JSON Lines
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SetupArg {
    Nli,
    Sts,
    TwoStep,
}

impl From<SetupArg> for TrainSetup {
    fn from(s: SetupArg) -> Self {
        match s {
            SetupArg::Nli => TrainSetup::Nli,
            SetupArg::Sts => TrainSetup::Sts,
            SetupArg::TwoStep => TrainSetup::TwoStep,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PoolingArg {
    Cls,
    Mean,
    Max,
}

impl From<PoolingArg> for PoolingStrategy {
    fn from(p: PoolingArg) -> Self {
        match p {
            PoolingArg::Cls => PoolingStrategy::Cls,
            PoolingArg::Mean => PoolingStrategy::Mean,
            PoolingArg::Max => PoolingStrategy::Max,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub setup: SetupArg,
    /// Triplet JSONL (anchor, positive, negative)
    #[arg(long)]
    pub nli: Option<PathBuf>,
    /// Scored-pair JSONL (sentence1, sentence2, score)
    #[arg(long)]
    pub sts: Option<PathBuf>,
    /// Checkpoint to write
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Continue from this checkpoint; its architecture must match the config
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Loss-trace CSV (defaults to the checkpoint path with .loss.csv)
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub pooling: Option<PoolingArg>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalKind {
    Sts,
    Cls,
}

#[derive(Debug, Args, Clone, Default)]
pub struct EmbedderArgs {
    /// Encoder checkpoint
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Word-vector text file ("count dim" header, one word per line)
    #[arg(long)]
    pub wordvecs: Option<PathBuf>,
    /// Subword bucket vectors for out-of-vocabulary words (with --wordvecs)
    #[arg(long)]
    pub buckets: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub pooling: Option<PoolingArg>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(value_enum)]
    pub kind: EvalKind,
    #[command(flatten)]
    pub embedder: EmbedderArgs,
    /// Scored pairs for `sts`
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Dataset name used in the result table
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub md: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Subcommand)]
pub enum ReportCommand {
    /// Cosine of each supplied sentence pair
    Pairs(PairsArgs),
}

#[derive(Debug, Args)]
pub struct PairsArgs {
    #[command(flatten)]
    pub embedder: EmbedderArgs,
    /// JSONL with sentence1 and sentence2
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub md: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub md: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Directory receiving nli.jsonl, sts.jsonl and cls_{train,val,test}.jsonl
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub common: CommonArgs,
}

/// Parses arguments and runs one command, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match cli.command {
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Report(ReportCommand::Pairs(a)) => commands::report_pairs(&a),
        Command::Compare(a) => commands::compare(&a),
        Command::Synth(a) => commands::synth(&a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
