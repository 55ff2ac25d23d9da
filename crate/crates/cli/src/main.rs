mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

/// Reaction-prediction seq2seq with swappable LoRA adapters.
#[derive(Debug, Parser)]
#[command(name = "chemlora", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load, curate, split and format a reaction dataset.
    Prepare(PrepareArgs),
    /// Train a base model from scratch (full mode).
    Pretrain(PretrainArgs),
    /// Task-tune a base model, fully or through a LoRA adapter.
    Train(TrainArgs),
    /// Acc@K evaluation with beam search.
    Eval(EvalArgs),
    /// Adapter bundle utilities.
    #[command(subcommand)]
    Adapter(AdapterCommand),
    /// Base / full fine-tune / adapter-attached / adapter-detached accuracy.
    Forgetting(ForgettingArgs),
    /// Predicted reagents absent from the training reagent sets.
    Ood(OodArgs),
    /// Cliff's delta and Wilcoxon signed-rank test on paired values.
    Stats(StatsArgs),
}

#[derive(Debug, Subcommand)]
enum AdapterCommand {
    /// Create a freshly initialised bundle for a model.
    Pack(PackArgs),
    /// Print a bundle's header and parameter counts.
    Inspect(InspectArgs),
    /// Fold a bundle into the base weights and save the result.
    Merge(MergeArgs),
    /// Attach bundles in turn (detach-then-attach) and report routing.
    Swap(SwapArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SyntheticGrammar {
    A,
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Full,
    Lora,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StatsMode {
    Auto,
    Exact,
    NormalApprox,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TaskFlags {
    /// Comma-separated tasks: fwd, retro, reag.
    #[arg(long, default_value = "fwd")]
    pub tasks: String,
    /// Prefix inputs with task tags and allow several tasks.
    #[arg(long)]
    pub multi_task: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DataFlags {
    /// Skip malformed rows instead of failing.
    #[arg(long)]
    pub lenient: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct PrepareArgs {
    /// JSONL or CSV reaction records.
    #[arg(long, required_unless_present = "synthetic", conflicts_with = "synthetic")]
    pub input: Option<PathBuf>,
    /// Generate a template grammar instead of reading a file.
    #[arg(long, value_enum)]
    pub synthetic: Option<SyntheticGrammar>,
    /// Number of synthetic records (default: the whole grammar).
    #[arg(long)]
    pub n: Option<usize>,
    /// Keep records whose yield is strictly above this; 0 disables.
    #[arg(long, default_value_t = 0.0)]
    pub min_yield: f64,
    /// Drop records whose product set repeats an earlier one.
    #[arg(long)]
    pub dedup_products: bool,
    #[arg(long, default_value = "8:1:1")]
    pub split: String,
    #[arg(long, env = "CHEMLORA_SEED", default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub tasks: TaskFlags,
    #[command(flatten)]
    pub data: DataFlags,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct OptimFlags {
    #[arg(long, default_value_t = 0.003)]
    pub lr: f64,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    /// Stop after this many optimiser steps.
    #[arg(long)]
    pub max_steps: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct PretrainArgs {
    /// Training records (JSONL or CSV).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub d_model: usize,
    #[arg(long, default_value_t = 4)]
    pub n_heads: usize,
    #[arg(long, default_value_t = 2)]
    pub encoder_layers: usize,
    #[arg(long, default_value_t = 2)]
    pub decoder_layers: usize,
    #[arg(long, default_value_t = 256)]
    pub d_ff: usize,
    #[arg(long, default_value_t = 256)]
    pub max_len: usize,
    #[command(flatten)]
    pub optim: OptimFlags,
    #[command(flatten)]
    pub tasks: TaskFlags,
    #[command(flatten)]
    pub data_flags: DataFlags,
    #[arg(long, env = "CHEMLORA_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct LoraFlags {
    #[arg(long, default_value_t = 16)]
    pub r: usize,
    #[arg(long, default_value_t = 32.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.0)]
    pub dropout: f64,
    /// Comma-separated weight names (default: attention query/value).
    #[arg(long)]
    pub targets: Option<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Base model checkpoint.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "lora")]
    pub mode: Mode,
    #[command(flatten)]
    pub lora: LoraFlags,
    /// Start from an existing bundle instead of a fresh one (lora mode).
    #[arg(long)]
    pub adapter: Option<PathBuf>,
    /// Bundle name (lora mode).
    #[arg(long, default_value = "task")]
    pub name: String,
    #[command(flatten)]
    pub optim: OptimFlags,
    #[command(flatten)]
    pub tasks: TaskFlags,
    #[command(flatten)]
    pub data_flags: DataFlags,
    #[arg(long, env = "CHEMLORA_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Adapter bundle; repeat to evaluate several, swapped in turn.
    #[arg(long)]
    pub adapter: Vec<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated K values.
    #[arg(long, default_value = "1,2,3,5")]
    pub k: String,
    #[arg(long, default_value_t = 8)]
    pub beam: usize,
    #[command(flatten)]
    pub tasks: TaskFlags,
    #[command(flatten)]
    pub data_flags: DataFlags,
    /// Output directory; reports go to standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct PackArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub lora: LoraFlags,
    #[arg(long, default_value = "task")]
    pub name: String,
    /// Task tags recorded in the bundle.
    #[arg(long, default_value = "")]
    pub tags: String,
    #[arg(long, env = "CHEMLORA_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct InspectArgs {
    pub adapter: PathBuf,
    /// Base model, for trainable-fraction reporting.
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct MergeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub adapter: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SwapArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Bundles to attach in order.
    #[arg(long, required = true)]
    pub adapter: Vec<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ForgettingArgs {
    #[arg(long)]
    pub base: PathBuf,
    /// Fully fine-tuned model.
    #[arg(long)]
    pub full: PathBuf,
    #[arg(long)]
    pub adapter: PathBuf,
    /// Evaluation set as NAME=PATH; repeatable.
    #[arg(long = "eval-set", required = true)]
    pub eval_sets: Vec<String>,
    #[arg(long, default_value = "1,2,3,5")]
    pub k: String,
    #[arg(long, default_value_t = 8)]
    pub beam: usize,
    #[command(flatten)]
    pub tasks: TaskFlags,
    #[command(flatten)]
    pub data_flags: DataFlags,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct OodArgs {
    /// Eval report JSON (REAG examples are used).
    #[arg(long)]
    pub report: PathBuf,
    /// Task-specific training records.
    #[arg(long)]
    pub task_train: PathBuf,
    /// General training records.
    #[arg(long)]
    pub general_train: PathBuf,
    /// Model label stored with each entry.
    #[arg(long, default_value = "model")]
    pub source_model: String,
    #[arg(long, default_value_t = 5)]
    pub top_k: usize,
    /// Also write the histogram as CSV.
    #[arg(long)]
    pub csv: bool,
    #[command(flatten)]
    pub data_flags: DataFlags,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct StatsArgs {
    /// JSON file with `labels`, `x` and `y`.
    #[arg(long, conflicts_with_all = ["x", "y"], required_unless_present_all = ["x", "y"])]
    pub input: Option<PathBuf>,
    /// Comma-separated values.
    #[arg(long, requires = "y", allow_hyphen_values = true)]
    pub x: Option<String>,
    #[arg(long, requires = "x", allow_hyphen_values = true)]
    pub y: Option<String>,
    #[arg(long, value_enum, default_value = "auto")]
    pub mode: StatsMode,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Prepare(a) => commands::prepare(&a),
        Command::Pretrain(a) => commands::pretrain(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Adapter(AdapterCommand::Pack(a)) => commands::pack(&a),
        Command::Adapter(AdapterCommand::Inspect(a)) => commands::inspect(&a),
        Command::Adapter(AdapterCommand::Merge(a)) => commands::merge(&a),
        Command::Adapter(AdapterCommand::Swap(a)) => commands::swap(&a),
        Command::Forgetting(a) => commands::forgetting(&a),
        Command::Ood(a) => commands::ood(&a),
        Command::Stats(a) => commands::stats(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
