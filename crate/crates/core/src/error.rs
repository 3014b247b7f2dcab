use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    MalformedRow { line: u64, message: String },

    #[error("line {line}: unknown label {label:?}")]
    UnknownLabel { line: u64, label: String },

    #[error("header does not contain column {0:?}")]
    MissingColumn(String),

    #[error("corpus contains no documents")]
    EmptyCorpus,

    #[error("no human-labeled documents in the training set")]
    NoHumanDocuments,

    #[error("invalid fold plan: {0}")]
    InvalidSplit(String),

    #[error("every slice of the tensor is zero")]
    DegenerateTensor,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("fingerprint mismatch: model has {expected}, caller has {found}")]
    FingerprintMismatch { expected: String, found: String },

    #[error("insufficient sample: {0}")]
    InsufficientSample(String),

    #[error("both classes must be present: {0}")]
    SingleClass(String),

    #[error("rank {rank} exceeds the smallest tensor mode {limit}")]
    RankTooLarge { rank: usize, limit: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed artifact: {0}")]
    Artifact(String),

    #[error("hygiene audit failed: {0}")]
    Audit(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_fold(self, fold: usize) -> Self {
        Error::Fold {
            fold,
            source: Box::new(self),
        }
    }

    /// Process exit code: 2 config, 3 data, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidSplit(_) | Error::RankTooLarge { .. } => 2,
            Error::DegenerateTensor | Error::Numerical(_) => 4,
            Error::Fold { source, .. } => source.exit_code(),
            _ => 3,
        }
    }
}
