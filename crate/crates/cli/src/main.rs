//! `duel` — experiment driver: generate corpora, carve compositional
//! splits, train with the configured pre-finetuning method, evaluate
//! checkpoints, and tabulate reports.
//!
//! Exit codes: 0 success, 1 configuration error (bad flags, bad config
//! file, missing inputs), 2 runtime failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use duel_cli::{commands, CliError};

#[derive(Parser)]
#[command(
    name = "duel",
    version,
    about = "Training laboratory for transferring compositional-generalization inductive bias"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate datasets, lexical variants, or synthetic lexicons.
    #[command(subcommand)]
    Generate(GenerateCommand),
    /// Split a dataset and write the reusable manifest.
    Split(SplitArgs),
    /// Run an experiment config: pre-finetune, fine-tune, evaluate.
    Train(TrainArgs),
    /// Score a persisted checkpoint on a dataset.
    Eval(EvalArgs),
    /// Aggregate run reports into one table.
    Report(ReportArgs),
}

#[derive(Subcommand)]
enum GenerateCommand {
    /// Enumerate the two-level command language into a TSV corpus.
    MiniScan(MiniScanArgs),
    /// Rewrite a dataset through a lexicon into a disjoint variant.
    Variant(VariantArgs),
    /// Synthesize pseudo-word alternatives for the given word classes.
    Lexicon(LexiconArgs),
}

#[derive(Args)]
struct MiniScanArgs {
    /// Output TSV path.
    #[arg(long)]
    out: PathBuf,
    /// Dataset name (also the default task tag).
    #[arg(long, default_value = "scan")]
    name: String,
    /// Only single-clause commands (no `and`/`after`).
    #[arg(long)]
    no_compound_clauses: bool,
    /// Drop commands whose output exceeds this many action tokens.
    #[arg(long)]
    max_output_tokens: Option<usize>,
    /// Subsample to at most this many examples.
    #[arg(long)]
    max_examples: Option<usize>,
    #[arg(long, default_value_t = 5)]
    seed: u64,
}

#[derive(Args)]
struct VariantArgs {
    /// Source dataset TSV.
    #[arg(long)]
    dataset: PathBuf,
    /// Lexicon TSV (class \t source \t alternatives).
    #[arg(long)]
    lexicon: PathBuf,
    /// Output TSV path.
    #[arg(long)]
    out: PathBuf,
    /// Also write the chosen word mapping here.
    #[arg(long)]
    mapping_out: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    seed: u64,
}

#[derive(Args)]
struct LexiconArgs {
    /// Word classes as `class:word,word;class:word`.
    #[arg(long)]
    spec: String,
    /// Alternatives to synthesize per word.
    #[arg(long, default_value_t = 3)]
    alternatives: usize,
    /// Output lexicon TSV path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5)]
    seed: u64,
}

#[derive(Args)]
struct SplitArgs {
    /// Dataset TSV to split.
    #[arg(long)]
    dataset: PathBuf,
    /// Dataset name recorded in the manifest (default: file stem).
    #[arg(long)]
    name: Option<String>,
    /// standard | length | mcd.
    #[arg(long)]
    kind: String,
    /// Train-side fraction.
    #[arg(long, default_value_t = 0.5)]
    fraction: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Swap proposals for the divergence search.
    #[arg(long, default_value_t = 2000)]
    iterations: usize,
    /// Best-of-n restarts of the divergence search.
    #[arg(long, default_value_t = 1)]
    restarts: usize,
    /// Manifest output path.
    #[arg(long)]
    out: PathBuf,
    /// Also write the train side as TSV.
    #[arg(long)]
    train_out: Option<PathBuf>,
    /// Also write the test side as TSV.
    #[arg(long)]
    test_out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Experiment TOML.
    #[arg(long)]
    config: PathBuf,
    /// Override config keys: `--set section.key=value` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct EvalArgs {
    /// Model sidecar (model.toml) written by `train`.
    #[arg(long)]
    model: PathBuf,
    /// Vocabulary TSV written by `train`.
    #[arg(long)]
    vocab: PathBuf,
    /// Parameter checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset TSV to score.
    #[arg(long)]
    dataset: PathBuf,
    /// Task tag to prepend to every input.
    #[arg(long)]
    tag: Option<String>,
    /// Decode-length cap (default: the model's).
    #[arg(long)]
    max_len: Option<usize>,
    /// Write per-example predictions here.
    #[arg(long)]
    predictions_out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// report.tsv files from `train` runs sharing a target.
    #[arg(required = true)]
    reports: Vec<PathBuf>,
}

fn run(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Generate(GenerateCommand::MiniScan(a)) => commands::generate_mini_scan_cmd(
            &a.out,
            &a.name,
            !a.no_compound_clauses,
            a.max_output_tokens,
            a.max_examples,
            a.seed,
        ),
        Command::Generate(GenerateCommand::Variant(a)) => commands::generate_variant_cmd(
            &a.dataset,
            &a.lexicon,
            &a.out,
            a.mapping_out.as_deref(),
            a.seed,
        ),
        Command::Generate(GenerateCommand::Lexicon(a)) => {
            commands::generate_lexicon_cmd(&a.spec, a.alternatives, &a.out, a.seed)
        }
        Command::Split(a) => commands::split_cmd(
            &a.dataset,
            a.name.as_deref(),
            &a.kind,
            a.fraction,
            a.seed,
            a.iterations,
            a.restarts,
            &a.out,
            a.train_out.as_deref(),
            a.test_out.as_deref(),
        ),
        Command::Train(a) => commands::train_cmd(&a.config, &a.set).map(|(_, table)| table),
        Command::Eval(a) => commands::eval_cmd(
            &a.model,
            &a.vocab,
            &a.checkpoint,
            &a.dataset,
            a.tag.as_deref(),
            a.max_len,
            a.predictions_out.as_deref(),
        ),
        Command::Report(a) => commands::report_cmd(&a.reports),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        // Bad flags are configuration errors, not clap's usual exit 2.
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(output) => {
            println!("{output}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
