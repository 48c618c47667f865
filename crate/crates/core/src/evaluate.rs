//! Fixed-rate MLM evaluation, pseudo-log-likelihood scoring and minimal-pair accuracy.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corruption::{self, CorruptionConfig, MaskOutcome};
use crate::data::{self, Batch, TokenSequence, Vocab, MASK};
use crate::error::{Error, Result};
use crate::model::{self, Heads, ModelParams, Targets};
use crate::seed::{self, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default = "default_eval_rate")]
    pub masking_rate: f64,
    #[serde(default)]
    pub seed: u64,
    /// Number of batches to evaluate; 0 means the whole dataset.
    #[serde(default)]
    pub n_batches: usize,
    #[serde(default = "default_eval_batch")]
    pub batch_size: usize,
}

fn default_eval_rate() -> f64 {
    0.15
}

fn default_eval_batch() -> usize {
    32
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            masking_rate: default_eval_rate(),
            seed: 0,
            n_batches: 0,
            batch_size: default_eval_batch(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.masking_rate) {
            return Err(Error::InvalidArgument(format!(
                "eval masking rate {} outside [0,1]",
                self.masking_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("eval batch_size must be >= 1".into()));
        }
        Ok(())
    }

    fn n_sequences(&self, dataset_len: usize) -> usize {
        if self.n_batches == 0 {
            dataset_len
        } else {
            dataset_len.min(self.n_batches * self.batch_size)
        }
    }
}

/// The masks used by [`eval_mlm`]. They depend only on the dataset, the
/// config and the vocab size, never on the parameters.
pub fn eval_masks(dataset: &[TokenSequence], cfg: &EvalConfig, vocab_size: usize) -> Result<Vec<MaskOutcome>> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let corruption = CorruptionConfig::default();
    dataset[..cfg.n_sequences(dataset.len())]
        .par_iter()
        .enumerate()
        .map(|(i, seq)| {
            let mut rng = seed::rng_for(cfg.seed, Stream::EvalMask, &[i as u64]);
            corruption::corrupt(seq, cfg.masking_rate, vocab_size, &corruption, &mut rng)
        })
        .collect()
}

/// Mean over batches of the per-batch mean masked-token NLL.
pub fn eval_mlm(params: &ModelParams, dataset: &[TokenSequence], cfg: &EvalConfig) -> Result<f64> {
    let masks = eval_masks(dataset, cfg, params.config.vocab_size)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for chunk in masks.chunks(cfg.batch_size) {
        let batch = Batch::collate(chunk.iter().map(|o| o.corrupted.as_slice()));
        let targets: Vec<Targets> = chunk.iter().map(Targets::from).collect();
        let out = model::forward(params, &batch, Heads::MLM)?;
        sum += model::mlm_loss(&out, &targets)?;
        n += 1;
    }
    Ok(sum / n as f64)
}

/// Pseudo-log-likelihood: mask each regular position in turn with `[MASK]`
/// and sum the log-probabilities of the original tokens.
pub fn pll(params: &ModelParams, sentence: &TokenSequence) -> Result<f64> {
    let positions = sentence.maskable();
    if positions.is_empty() {
        return Err(Error::InvalidArgument("sentence has no scorable tokens".into()));
    }
    let copies: Vec<Vec<u32>> = positions
        .iter()
        .map(|&i| {
            let mut ids = sentence.ids.clone();
            ids[i] = MASK;
            ids
        })
        .collect();
    let batch = Batch::collate(copies.iter().map(Vec::as_slice));
    let out = model::forward(params, &batch, Heads::MLM)?;
    let mut total = 0.0;
    for (b, &i) in positions.iter().enumerate() {
        let row = out.mlm_row(b, i).expect("mlm head evaluated");
        total += model::log_softmax_at(row, sentence.ids[i] as usize);
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinimalPair {
    pub pair_id: String,
    pub super_task: String,
    #[serde(rename = "sentence_good")]
    pub positive: String,
    #[serde(rename = "sentence_bad")]
    pub negative: String,
}

/// Parse a TSV with header `pair_id  super_task  sentence_good  sentence_bad`.
pub fn parse_pairs_tsv(text: &str) -> Result<Vec<MinimalPair>> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .quoting(false)
        .has_headers(true)
        .from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| Error::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    for col in ["pair_id", "super_task", "sentence_good", "sentence_bad"] {
        if !headers.iter().any(|h| h == col) {
            return Err(Error::Parse {
                line: 1,
                message: format!("missing column {col:?}"),
            });
        }
    }
    rdr.deserialize()
        .enumerate()
        .map(|(i, r)| {
            r.map_err(|e| Error::Parse {
                line: i + 2,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Inverse of [`parse_pairs_tsv`]. Fields must not contain tabs or newlines.
pub fn pairs_to_tsv(pairs: &[MinimalPair]) -> Result<String> {
    let mut out = String::from("pair_id\tsuper_task\tsentence_good\tsentence_bad\n");
    for p in pairs {
        let fields = [&p.pair_id, &p.super_task, &p.positive, &p.negative];
        if fields.iter().any(|f| f.contains(['\t', '\n', '\r'])) {
            return Err(Error::InvalidArgument(format!(
                "pair {} has a tab or newline in a field",
                p.pair_id
            )));
        }
        out.push_str(&fields.map(|f| f.as_str()).join("\t"));
        out.push('\n');
    }
    Ok(out)
}

pub fn read_pairs(path: &Path) -> Result<Vec<MinimalPair>> {
    let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pairs_tsv(&s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskAccuracy {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub super_tasks: BTreeMap<String, TaskAccuracy>,
    /// Unweighted mean of the super-task accuracies.
    pub overall: f64,
    pub n_pairs: usize,
}

/// Decide each pair from its two PLL scores. Ties count as incorrect.
pub fn score_pairs(pairs: &[MinimalPair], scores: &[(f64, f64)]) -> Result<AccuracyReport> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("no minimal pairs".into()));
    }
    if scores.len() != pairs.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} pairs but {} scores",
            pairs.len(),
            scores.len()
        )));
    }
    let mut tasks: BTreeMap<String, TaskAccuracy> = BTreeMap::new();
    for (pair, &(pos, neg)) in pairs.iter().zip(scores) {
        let e = tasks.entry(pair.super_task.clone()).or_insert(TaskAccuracy {
            correct: 0,
            total: 0,
            accuracy: 0.0,
        });
        e.total += 1;
        if pos > neg {
            e.correct += 1;
        }
    }
    for t in tasks.values_mut() {
        t.accuracy = t.correct as f64 / t.total as f64;
    }
    let overall = tasks.values().map(|t| t.accuracy).sum::<f64>() / tasks.len() as f64;
    Ok(AccuracyReport {
        super_tasks: tasks,
        overall,
        n_pairs: pairs.len(),
    })
}

pub fn minimal_pair_accuracy(params: &ModelParams, vocab: &Vocab, pairs: &[MinimalPair]) -> Result<AccuracyReport> {
    let max_len = params.config.max_seq_len;
    let scores: Vec<(f64, f64)> = pairs
        .par_iter()
        .map(|p| {
            let pos = data::encode(vocab, &p.positive, max_len)?;
            let neg = data::encode(vocab, &p.negative, max_len)?;
            if pos.maskable().is_empty() || neg.maskable().is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "pair {} has a sentence with no in-vocabulary tokens",
                    p.pair_id
                )));
            }
            Ok((pll(params, &pos)?, pll(params, &neg)?))
        })
        .collect::<Result<_>>()?;
    score_pairs(pairs, &scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{CLS, SEP};
    use crate::model::ModelConfig;
    use approx::assert_abs_diff_eq;

    fn uniform(v: usize) -> ModelParams {
        ModelParams::zeros(&ModelConfig {
            vocab_size: v,
            max_seq_len: 16,
            ..ModelConfig::tiny()
        })
        .unwrap()
    }

    fn dataset(n: usize, v: u32) -> Vec<TokenSequence> {
        (0..n)
            .map(|i| TokenSequence {
                ids: std::iter::once(CLS)
                    .chain((0..(4 + i % 5)).map(|k| 5 + ((i + k) as u32 % (v - 5))))
                    .chain(std::iter::once(SEP))
                    .collect(),
            })
            .collect()
    }

    #[test]
    fn uniform_model_eval_is_log_vocab() {
        let p = uniform(100);
        let l = eval_mlm(
            &p,
            &dataset(20, 100),
            &EvalConfig {
                batch_size: 6,
                ..EvalConfig::default()
            },
        )
        .unwrap();
        assert_abs_diff_eq!(l, 100f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn eval_is_reproducible_and_masks_ignore_params() {
        let ds = dataset(30, 16);
        let cfg = EvalConfig {
            batch_size: 4,
            n_batches: 5,
            ..EvalConfig::default()
        };
        let a = ModelParams::init(&ModelConfig {
            max_seq_len: 16,
            ..ModelConfig::tiny()
        })
        .unwrap();
        assert_eq!(
            eval_mlm(&a, &ds, &cfg).unwrap().to_bits(),
            eval_mlm(&a, &ds, &cfg).unwrap().to_bits()
        );
        let m1 = eval_masks(&ds, &cfg, 16).unwrap();
        assert_eq!(m1.len(), 20);
        assert_eq!(m1, eval_masks(&ds, &cfg, 16).unwrap());
    }

    #[test]
    fn eval_rejects_bad_input() {
        let p = uniform(16);
        assert!(eval_mlm(&p, &[], &EvalConfig::default()).is_err());
        let bad = EvalConfig {
            masking_rate: 1.5,
            ..EvalConfig::default()
        };
        assert!(eval_mlm(&p, &dataset(3, 16), &bad).is_err());
    }

    #[test]
    fn uniform_pll_is_minus_l_log_v() {
        let p = uniform(100);
        let s = TokenSequence {
            ids: vec![CLS, 7, 8, 9, 10, SEP],
        };
        assert_abs_diff_eq!(pll(&p, &s).unwrap(), -4.0 * 100f64.ln(), epsilon = 1e-12);
        let one = TokenSequence { ids: vec![CLS, 7, SEP] };
        assert_abs_diff_eq!(pll(&p, &one).unwrap(), -(100f64.ln()), epsilon = 1e-12);
        assert!(pll(&p, &TokenSequence { ids: vec![CLS, SEP] }).is_err());
    }

    fn pair(id: &str, task: &str) -> MinimalPair {
        MinimalPair {
            pair_id: id.into(),
            super_task: task.into(),
            positive: "a b".into(),
            negative: "b a".into(),
        }
    }

    #[test]
    fn ties_are_incorrect_and_overall_is_task_mean() {
        let pairs = [pair("1", "x"), pair("2", "x"), pair("3", "x"), pair("4", "y")];
        let scores = [(-1.0, -2.0), (-3.0, -3.0), (-5.0, -4.0), (-1.0, -1.5)];
        let r = score_pairs(&pairs, &scores).unwrap();
        assert_eq!(r.super_tasks["x"].correct, 1);
        assert_abs_diff_eq!(r.super_tasks["x"].accuracy, 1.0 / 3.0);
        assert_eq!(r.super_tasks["y"].accuracy, 1.0);
        assert_abs_diff_eq!(r.overall, (1.0 / 3.0 + 1.0) / 2.0);
        assert!(score_pairs(&[], &[]).is_err());
    }

    #[test]
    fn parses_pairs_tsv() {
        let tsv = "pair_id\tsuper_task\tsentence_good\tsentence_bad\n\
                   1\tagreement\tthe cat sits\tthe cat sit\n\
                   2\tisland\twho did you see\twho did you see him\n";
        let pairs = parse_pairs_tsv(tsv).unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0].positive, "the cat sits");
        assert_eq!(pairs[1].super_task, "island");
        assert!(parse_pairs_tsv("a\tb\n1\t2\n").is_err());
        assert_eq!(parse_pairs_tsv(&pairs_to_tsv(&pairs).unwrap()).unwrap(), pairs);
        let mut bad = pairs[0].clone();
        bad.positive.push('\t');
        assert!(pairs_to_tsv(&[bad]).is_err());
    }

    #[test]
    fn pll_order_invariance() {
        // Scoring the masked copies in reverse order gives the same total.
        let p = ModelParams::init(&ModelConfig {
            max_seq_len: 16,
            ..ModelConfig::tiny()
        })
        .unwrap();
        let s = TokenSequence {
            ids: vec![CLS, 7, 8, 9, 10, SEP],
        };
        let fwd = pll(&p, &s).unwrap();
        let mut rev = 0.0;
        for &i in s.maskable().iter().rev() {
            let mut ids = s.ids.clone();
            ids[i] = MASK;
            let out = model::forward(&p, &Batch::collate([ids.as_slice()]), Heads::MLM).unwrap();
            rev += model::log_softmax_at(out.mlm_row(0, i).unwrap(), s.ids[i] as usize);
        }
        assert_abs_diff_eq!(fwd, rev, epsilon = 1e-12);
    }
}
