//! `maskrate`: train, evaluate and analyse masked-language-model runs with
//! scheduled masking rates.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "maskrate",
    version,
    about = "Masking-rate scheduled MLM pretraining at desk scale"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a JSON run config.
    Train(commands::train::TrainArgs),
    /// Fixed-rate MLM loss or minimal-pair accuracy of a checkpoint.
    Eval(commands::eval::EvalArgs),
    /// Per-task significance table from {task: {schedule: [values]}} JSON.
    Compare(commands::compare::CompareArgs),
    /// Fit speedup curves to step/value series and report crossovers.
    Speedup(commands::speedup::SpeedupArgs),
    /// Compare analytic gradients against finite differences.
    Gradcheck(commands::gradcheck::GradcheckArgs),
    /// Build a vocabulary file from a corpus.
    Vocab(VocabArgs),
    /// Write a toy Zipf/Markov corpus and optional minimal pairs.
    Synth(commands::synth::SynthArgs),
}

#[derive(Args)]
struct VocabArgs {
    /// Corpus, one sentence per line.
    #[arg(long)]
    corpus: PathBuf,
    /// Maximum vocabulary size, special tokens included.
    #[arg(long)]
    size: usize,
    #[arg(long)]
    out: PathBuf,
}

fn vocab(a: VocabArgs) -> error::CliResult<()> {
    let lines = maskrate::data::read_corpus(&a.corpus)?;
    let v = maskrate::data::build_vocab(lines.iter(), a.size)?;
    v.write(&a.out)?;
    println!("{}", serde_json::json!({ "vocab_size": v.len(), "path": a.out }));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => commands::train::run(a),
        Command::Eval(a) => commands::eval::run(a),
        Command::Compare(a) => commands::compare::run(a),
        Command::Speedup(a) => commands::speedup::run(a),
        Command::Gradcheck(a) => commands::gradcheck::run(a),
        Command::Vocab(a) => vocab(a),
        Command::Synth(a) => commands::synth::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
