use std::path::{Path, PathBuf};

use maskrate::evaluate::EvalConfig;
use maskrate::trainer::TrainConfig;
use maskrate::ModelConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Model shape; the vocabulary size comes from the vocabulary built from the corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
    #[serde(default)]
    pub init_seed: u64,
    #[serde(default)]
    pub tie_embeddings: bool,
}

impl ModelSection {
    pub fn with_vocab(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            d_model: self.d_model,
            d_ff: self.d_ff,
            vocab_size,
            max_seq_len: self.max_seq_len,
            init_seed: self.init_seed,
            tie_embeddings: self.tie_embeddings,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// One sentence per line.
    pub corpus: PathBuf,
    /// Held-out sentences for evaluation; the training corpus when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_corpus: Option<PathBuf>,
    /// Upper bound on vocabulary size, special tokens included.
    pub vocab_size: usize,
    pub model: ModelSection,
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    pub output_dir: PathBuf,
}

impl RunConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| CliError::usage(format!("invalid run config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Check every nested section, naming the offending field.
    pub fn validate(&self) -> CliResult<()> {
        let field = |name: &str, e: maskrate::Error| CliError::usage(format!("invalid {name}: {e}"));
        if self.vocab_size <= maskrate::data::NUM_SPECIALS as usize {
            return Err(CliError::usage(format!(
                "invalid vocab_size: {} leaves no room for regular tokens",
                self.vocab_size
            )));
        }
        self.model
            .with_vocab(self.vocab_size)
            .validate()
            .map_err(|e| field("model", e))?;
        if self.model.max_seq_len < 3 {
            return Err(CliError::usage("invalid model.max_seq_len: must be >= 3"));
        }
        self.train.schedule_spec().map_err(|e| field("train.schedule", e))?;
        self.train
            .corruption
            .validate()
            .map_err(|e| field("train.corruption", e))?;
        self.train.validate().map_err(|e| field("train", e))?;
        self.eval.validate().map_err(|e| field("eval", e))?;
        Ok(())
    }

    /// Pretty JSON with every default filled in.
    pub fn to_normalized_json(&self) -> CliResult<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}
