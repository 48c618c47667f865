use std::path::PathBuf;

use clap::Args;
use maskrate::evaluate::{self, EvalConfig};
use maskrate::{checkpoint, data, Vocab};

use super::print_json;
use crate::error::{CliError, CliResult};

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Vocabulary the checkpoint was trained with (vocab.txt in the run directory).
    #[arg(long)]
    vocab: PathBuf,
    /// Sentences to evaluate the MLM loss on.
    #[arg(long, conflicts_with = "pairs", required_unless_present = "pairs")]
    data: Option<PathBuf>,
    /// Minimal-pair TSV; reports pseudo-log-likelihood accuracy instead.
    #[arg(long)]
    pairs: Option<PathBuf>,
    #[arg(long, default_value_t = 0.15, value_parser = super::parse_rate)]
    rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Batches to evaluate; 0 for the whole file.
    #[arg(long, default_value_t = 0)]
    n_batches: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
}

pub fn run(a: EvalArgs) -> CliResult<()> {
    let params = checkpoint::load_params(&a.checkpoint)?;
    let vocab = Vocab::read(&a.vocab)?;
    if vocab.len() != params.config.vocab_size {
        return Err(CliError::Runtime(format!(
            "checkpoint expects a vocabulary of {} tokens but {} has {}",
            params.config.vocab_size,
            a.vocab.display(),
            vocab.len()
        )));
    }
    if let Some(p) = &a.pairs {
        let pairs = evaluate::read_pairs(p)?;
        let report = evaluate::minimal_pair_accuracy(&params, &vocab, &pairs)?;
        return print_json(&report);
    }
    let path = a.data.as_ref().expect("clap requires --data or --pairs");
    let cfg = EvalConfig {
        masking_rate: a.rate,
        seed: a.seed,
        n_batches: a.n_batches,
        batch_size: a.batch_size,
    };
    cfg.validate().map_err(CliError::usage)?;
    let lines = data::read_corpus(path)?;
    let dataset: Vec<_> = data::encode_corpus(&vocab, lines.iter(), params.config.max_seq_len)?
        .into_iter()
        .filter(|s| !s.maskable().is_empty())
        .collect();
    let loss = evaluate::eval_mlm(&params, &dataset, &cfg)?;
    print_json(&serde_json::json!({
        "mean_loss": loss,
        "rate": cfg.masking_rate,
        "seed": cfg.seed,
        "n_sequences": dataset.len(),
    }))
}
