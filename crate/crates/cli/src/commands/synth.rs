use std::path::PathBuf;

use clap::Args;
use maskrate::evaluate;
use maskrate::synth::{self, SynthConfig};

use super::{print_json, write_file};
use crate::error::{CliError, CliResult};

#[derive(Args)]
pub struct SynthArgs {
    /// Corpus output, one sentence per line.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    sequences: usize,
    /// Distinct words (the vocabulary adds five special tokens).
    #[arg(long, default_value_t = 195)]
    words: usize,
    #[arg(long, default_value_t = 8)]
    min_len: usize,
    #[arg(long, default_value_t = 16)]
    max_len: usize,
    /// Probability that a word follows its predecessor's fixed successor.
    #[arg(long, default_value_t = 0.6, value_parser = super::parse_rate)]
    successor_prob: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write minimal pairs (TSV) here.
    #[arg(long)]
    pairs: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    n_pairs: usize,
}

pub fn run(a: SynthArgs) -> CliResult<()> {
    let cfg = SynthConfig {
        n_sequences: a.sequences,
        n_words: a.words,
        zipf_exponent: 1.0,
        min_len: a.min_len,
        max_len: a.max_len,
        successor_prob: a.successor_prob,
        seed: a.seed,
    };
    cfg.validate().map_err(CliError::usage)?;
    let lines = synth::generate(&cfg)?;
    maskrate::data::write_corpus(&a.out, &lines)?;
    if let Some(p) = &a.pairs {
        let pairs = synth::minimal_pairs(&cfg, a.n_pairs)?;
        write_file(p, &evaluate::pairs_to_tsv(&pairs)?)?;
    }
    print_json(&serde_json::json!({ "sequences": lines.len(), "config": cfg }))
}
