//! Corpus ingestion: vocabulary, whitespace tokenization and seeded batching.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::seed::{self, Stream};

pub const PAD: u32 = 0;
pub const MASK: u32 = 1;
pub const CLS: u32 = 2;
pub const SEP: u32 = 3;
pub const UNK: u32 = 4;

/// Special token strings, in id order.
pub const SPECIAL_TOKENS: [&str; 5] = ["[PAD]", "[MASK]", "[CLS]", "[SEP]", "[UNK]"];
pub const NUM_SPECIALS: u32 = SPECIAL_TOKENS.len() as u32;

pub fn is_special(id: u32) -> bool {
    id < NUM_SPECIALS
}

/// Dense token vocabulary. Ids `0..5` are the specials in [`SPECIAL_TOKENS`] order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    id_of: HashMap<String, u32>,
}

impl Vocab {
    /// Build from a token list whose first five entries are the specials.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIAL_TOKENS.len() || tokens.iter().zip(SPECIAL_TOKENS).any(|(t, s)| t != s) {
            return Err(Error::InvalidArgument(
                "vocab must start with [PAD], [MASK], [CLS], [SEP], [UNK]".into(),
            ));
        }
        let mut id_of = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::InvalidArgument(format!("bad vocab entry {t:?} at id {i}")));
            }
            if id_of.insert(t.clone(), i as u32).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate vocab entry {t:?}")));
            }
        }
        Ok(Self { tokens, id_of })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.id_of.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Number of ids a random replacement may draw from.
    pub fn num_regular(&self) -> usize {
        self.tokens.len() - NUM_SPECIALS as usize
    }

    /// Vocab file: one token per line, line number is the id.
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn parse_file_string(s: &str) -> Result<Self> {
        Self::from_tokens(s.lines().map(str::to_owned).collect())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_file_string()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_file_string(&s)
    }
}

fn words(line: &str) -> impl Iterator<Item = String> + '_ {
    line.split_whitespace().map(str::to_lowercase)
}

/// Keep the `max_size - 5` most frequent lowercased whitespace tokens.
/// Frequency ties are broken lexicographically.
pub fn build_vocab<I, S>(corpus: I, max_size: usize) -> Result<Vocab>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    if max_size < SPECIAL_TOKENS.len() + 1 {
        return Err(Error::VocabTooSmall(max_size));
    }
    let mut counts: HashMap<String, u64> = HashMap::new();
    for line in corpus {
        for w in words(line.as_ref()) {
            *counts.entry(w).or_default() += 1;
        }
    }
    if counts.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(max_size - SPECIAL_TOKENS.len());

    let tokens = SPECIAL_TOKENS
        .iter()
        .map(|s| s.to_string())
        .chain(ranked.into_iter().map(|(w, _)| w))
        .collect();
    Vocab::from_tokens(tokens)
}

/// `[CLS] ids... [SEP]`, always at least two ids long.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Positions eligible for masking: everything that is not a special id.
    pub fn maskable(&self) -> Vec<usize> {
        maskable_positions(&self.ids)
    }
}

pub fn maskable_positions(ids: &[u32]) -> Vec<usize> {
    ids.iter()
        .enumerate()
        .filter(|(_, &id)| !is_special(id))
        .map(|(i, _)| i)
        .collect()
}

/// Encode one line, truncating from the right to fit `max_len` including `[CLS]`/`[SEP]`.
pub fn encode(vocab: &Vocab, line: &str, max_len: usize) -> Result<TokenSequence> {
    if max_len < 3 {
        return Err(Error::InvalidArgument(format!("max_len {max_len} < 3")));
    }
    let mut ids = Vec::with_capacity(max_len.min(64));
    ids.push(CLS);
    ids.extend(words(line).take(max_len - 2).map(|w| vocab.id(&w).unwrap_or(UNK)));
    ids.push(SEP);
    Ok(TokenSequence { ids })
}

/// Inverse of [`encode`] up to lowercasing, truncation and OOV replacement.
pub fn decode(vocab: &Vocab, seq: &TokenSequence) -> String {
    seq.ids
        .iter()
        .filter(|&&id| id != CLS && id != SEP && id != PAD)
        .map(|&id| vocab.token(id).unwrap_or(SPECIAL_TOKENS[UNK as usize]))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Encode every line of a corpus.
pub fn encode_corpus<I, S>(vocab: &Vocab, lines: I, max_len: usize) -> Result<Vec<TokenSequence>>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    lines.into_iter().map(|l| encode(vocab, l.as_ref(), max_len)).collect()
}

/// Read a UTF-8, LF-delimited corpus file.
pub fn read_corpus(path: &Path) -> Result<Vec<String>> {
    let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(s.lines().map(str::to_owned).collect())
}

pub fn write_corpus(path: &Path, lines: &[String]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for l in lines {
        writeln!(f, "{l}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// A padded batch. Row `b` occupies `ids[b * seq_len..(b + 1) * seq_len]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Batch {
    pub ids: Vec<u32>,
    pub batch_size: usize,
    pub seq_len: usize,
    /// Unpadded length of each row.
    pub lengths: Vec<usize>,
}

impl Batch {
    /// Pad `seqs` to the longest member with `[PAD]`.
    pub fn collate<'a, I>(seqs: I) -> Self
    where
        I: IntoIterator<Item = &'a [u32]>,
    {
        let rows: Vec<&[u32]> = seqs.into_iter().collect();
        let seq_len = rows.iter().map(|r| r.len()).max().unwrap_or(0);
        let mut ids = Vec::with_capacity(rows.len() * seq_len);
        for r in &rows {
            ids.extend_from_slice(r);
            ids.extend(std::iter::repeat_n(PAD, seq_len - r.len()));
        }
        Self {
            ids,
            batch_size: rows.len(),
            seq_len,
            lengths: rows.iter().map(|r| r.len()).collect(),
        }
    }

    pub fn row(&self, b: usize) -> &[u32] {
        &self.ids[b * self.seq_len..(b + 1) * self.seq_len]
    }

    pub fn row_mut(&mut self, b: usize) -> &mut [u32] {
        &mut self.ids[b * self.seq_len..(b + 1) * self.seq_len]
    }

    /// True at real (non-padding) positions.
    pub fn padding_mask(&self) -> Vec<bool> {
        let mut m = Vec::with_capacity(self.ids.len());
        for &len in &self.lengths {
            m.extend((0..self.seq_len).map(|i| i < len));
        }
        m
    }
}

/// Shuffled visiting order for one epoch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPlan {
    pub epoch_seed: u64,
    pub batch_size: usize,
    pub order: Vec<usize>,
}

impl BatchPlan {
    pub fn new(dataset_len: usize, batch_size: usize, epoch_seed: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        if dataset_len == 0 {
            return Err(Error::EmptyDataset);
        }
        let mut order: Vec<usize> = (0..dataset_len).collect();
        let mut rng = seed::rng_for(epoch_seed, Stream::DataOrder, &[]);
        order.shuffle(&mut rng);
        Ok(Self {
            epoch_seed,
            batch_size,
            order,
        })
    }

    /// Plan for epoch `epoch` of a run seeded with `run_seed`.
    pub fn for_epoch(dataset_len: usize, batch_size: usize, run_seed: u64, epoch: u64) -> Result<Self> {
        Self::new(
            dataset_len,
            batch_size,
            seed::derive_seed(run_seed, Stream::DataOrder, &[epoch]),
        )
    }

    /// Remainder batches are kept, so this rounds up.
    pub fn num_batches(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }

    pub fn batch_indices(&self, k: usize) -> &[usize] {
        let start = k * self.batch_size;
        let end = (start + self.batch_size).min(self.order.len());
        &self.order[start..end]
    }
}

/// One epoch of padded batches in seeded order.
pub struct Batches<'a> {
    dataset: &'a [TokenSequence],
    plan: BatchPlan,
    next: usize,
}

impl<'a> Batches<'a> {
    pub fn plan(&self) -> &BatchPlan {
        &self.plan
    }
}

impl Iterator for Batches<'_> {
    /// The batch plus the dataset indices of its rows.
    type Item = (Batch, Vec<usize>);

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.plan.num_batches() {
            return None;
        }
        let idx = self.plan.batch_indices(self.next).to_vec();
        self.next += 1;
        let batch = Batch::collate(idx.iter().map(|&i| self.dataset[i].ids.as_slice()));
        Some((batch, idx))
    }
}

pub fn batches(dataset: &[TokenSequence], batch_size: usize, seed: u64) -> Result<Batches<'_>> {
    let plan = BatchPlan::new(dataset.len(), batch_size, seed)?;
    Ok(Batches { dataset, plan, next: 0 })
}
