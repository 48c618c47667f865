use std::path::PathBuf;

/// Errors produced by the pretraining toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("vocab too small: max_size {0} < 6")]
    VocabTooSmall(usize),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("step out of range: {step} > {total}")]
    StepOutOfRange { step: u64, total: u64 },
    #[error("nothing to mask")]
    NothingToMask,
    #[error("cannot substitute: vocab has fewer than 2 non-special tokens")]
    CannotSubstitute,
    #[error("invalid model config: {0}")]
    InvalidModelConfig(String),
    #[error("token id {id} out of range for vocab of size {vocab_size}")]
    TokenOutOfRange { id: u32, vocab_size: usize },
    #[error("sequence length {len} exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("loss undefined, |M|=0")]
    EmptyLossSet,
    #[error("diverged at step {step}: {reason}")]
    Diverged { step: u64, reason: String },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),
    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("never matches baseline")]
    NeverMatchesBaseline,
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
