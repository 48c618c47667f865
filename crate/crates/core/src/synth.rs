//! Toy corpora for desk-scale runs.
//!
//! Words are drawn from a Zipf unigram distribution, but with probability
//! `successor_prob` the next word is a fixed function of the previous one, so
//! a model that reads context beats the unigram baseline.

use rand::Rng as _;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluate::MinimalPair;
use crate::seed::{self, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n_sequences: usize,
    /// Distinct words; with the five special tokens the vocabulary holds at
    /// most `n_words + 5` entries.
    pub n_words: usize,
    pub zipf_exponent: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub successor_prob: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_sequences: 2000,
            n_words: 195,
            zipf_exponent: 1.0,
            min_len: 8,
            max_len: 16,
            successor_prob: 0.6,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.n_words < 2 {
            return bad("n_words must be >= 2");
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return bad("need 1 <= min_len <= max_len");
        }
        if !(0.0..=1.0).contains(&self.successor_prob) {
            return bad("successor_prob outside [0,1]");
        }
        if !(self.zipf_exponent > 0.0) {
            return bad("zipf_exponent must be > 0");
        }
        Ok(())
    }

    /// Word the chain prefers after `w`.
    fn successor(&self, w: usize) -> usize {
        (7 * w + 3) % self.n_words
    }
}

pub fn word(i: usize) -> String {
    format!("w{i}")
}

fn sentence_ids(cfg: &SynthConfig, index: u64) -> Result<Vec<usize>> {
    let mut rng = seed::rng_for(cfg.seed, Stream::Synthetic, &[index]);
    let zipf = Zipf::new(cfg.n_words as f64, cfg.zipf_exponent).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let len = rng.random_range(cfg.min_len..=cfg.max_len);
    let mut out: Vec<usize> = Vec::with_capacity(len);
    for _ in 0..len {
        let next = match out.last() {
            Some(&prev) if rng.random::<f64>() < cfg.successor_prob => cfg.successor(prev),
            _ => zipf.sample(&mut rng) as usize - 1,
        };
        out.push(next);
    }
    Ok(out)
}

fn render(ids: &[usize]) -> String {
    ids.iter().map(|&i| word(i)).collect::<Vec<_>>().join(" ")
}

/// Generate `n_sequences` whitespace-separated lines.
pub fn generate(cfg: &SynthConfig) -> Result<Vec<String>> {
    cfg.validate()?;
    (0..cfg.n_sequences as u64)
        .map(|i| sentence_ids(cfg, i).map(|s| render(&s)))
        .collect()
}

/// Minimal pairs built from fresh sentences. `chain` pairs break one
/// successor link by replacing the following word; `swap` pairs exchange two
/// adjacent words that form a successor link.
pub fn minimal_pairs(cfg: &SynthConfig, n_pairs: usize) -> Result<Vec<MinimalPair>> {
    cfg.validate()?;
    let mut pairs = Vec::with_capacity(n_pairs);
    let mut index = cfg.n_sequences as u64;
    while pairs.len() < n_pairs {
        index += 1;
        let good = sentence_ids(cfg, index)?;
        let links: Vec<usize> = (1..good.len())
            .filter(|&i| good[i] == cfg.successor(good[i - 1]) && good[i - 1] != good[i])
            .collect();
        if links.is_empty() {
            continue;
        }
        let mut rng = seed::rng_for(cfg.seed, Stream::Synthetic, &[index, 1]);
        let i = links[rng.random_range(0..links.len())];
        let mut bad = good.clone();
        let task = if pairs.len() % 2 == 0 {
            let mut w = rng.random_range(0..cfg.n_words);
            while w == good[i] {
                w = rng.random_range(0..cfg.n_words);
            }
            bad[i] = w;
            "chain"
        } else {
            bad.swap(i - 1, i);
            "swap"
        };
        pairs.push(MinimalPair {
            pair_id: format!("p{}", pairs.len()),
            super_task: task.into(),
            positive: render(&good),
            negative: render(&bad),
        });
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data;

    #[test]
    fn corpus_shape_and_determinism() {
        let cfg = SynthConfig {
            n_sequences: 300,
            ..SynthConfig::default()
        };
        let a = generate(&cfg).unwrap();
        assert_eq!(a, generate(&cfg).unwrap());
        assert_eq!(a.len(), 300);
        for l in &a {
            let n = l.split_whitespace().count();
            assert!((8..=16).contains(&n));
        }
        let vocab = data::build_vocab(a.iter(), 1000).unwrap();
        assert!(vocab.len() <= 200);
        let b = generate(&SynthConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn frequencies_are_skewed() {
        let lines = generate(&SynthConfig {
            successor_prob: 0.0,
            ..SynthConfig::default()
        })
        .unwrap();
        let count = |w: &str| {
            lines
                .iter()
                .flat_map(|l| l.split_whitespace())
                .filter(|t| *t == w)
                .count()
        };
        assert!(count("w0") > 5 * count("w20"));
    }

    #[test]
    fn pairs_differ_in_one_place() {
        let pairs = minimal_pairs(&SynthConfig::default(), 20).unwrap();
        assert_eq!(pairs.len(), 20);
        for p in &pairs {
            let a: Vec<&str> = p.positive.split_whitespace().collect();
            let b: Vec<&str> = p.negative.split_whitespace().collect();
            assert_eq!(a.len(), b.len());
            let diffs = a.iter().zip(&b).filter(|(x, y)| x != y).count();
            assert!((1..=2).contains(&diffs), "{p:?}");
        }
    }

    #[test]
    fn bad_configs() {
        assert!(SynthConfig {
            min_len: 0,
            ..SynthConfig::default()
        }
        .validate()
        .is_err());
        assert!(SynthConfig {
            n_words: 1,
            ..SynthConfig::default()
        }
        .validate()
        .is_err());
        assert!(SynthConfig {
            successor_prob: 1.5,
            ..SynthConfig::default()
        }
        .validate()
        .is_err());
    }
}
