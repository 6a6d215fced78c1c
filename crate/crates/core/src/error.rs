use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("empty input string")]
    EmptyInput,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("index {index} out of vocabulary range (size {vocab_size})")]
    IndexOutOfRange { index: usize, vocab_size: usize },
    #[error("non-finite value in parameter tensor `{0}`")]
    NonFiniteParams(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("forward cache does not match batch: {0}")]
    CacheMismatch(String),
    #[error("gradient overflow")]
    GradientOverflow,
    #[error("undefined correlation")]
    UndefinedCorrelation,
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("bucket boundaries must be strictly increasing within [0, 1]")]
    UnsortedBoundaries,
    #[error("epoch {epoch} outside schedule range 1..={total}")]
    EpochOutOfRange { epoch: usize, total: usize },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("bad magic bytes in checkpoint blob")]
    BadMagic,
    #[error("unsupported version {found} (this build reads version {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },
    #[error("vocabulary mismatch: {0}")]
    VocabMismatch(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("record {0} has no rnn_score")]
    MissingRnnScore(usize),
    #[error("unknown {kind} `{name}` (known: {known})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        known: String,
    },
    #[error("malformed embedding file: {0}")]
    MalformedEmbedding(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse classification used by the command line to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numerical,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidConfig(_) | Error::UnknownStrategy { .. } | Error::EpochOutOfRange { .. } => {
                ErrorClass::Usage
            }
            Error::NonFiniteParams(_)
            | Error::GradientOverflow
            | Error::NonFiniteLoss { .. }
            | Error::UndefinedCorrelation => ErrorClass::Numerical,
            _ => ErrorClass::Data,
        }
    }
}
