use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("matrix is not positive definite (pivot {pivot} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },
    #[error("problem is infeasible")]
    Infeasible,
    #[error("active-set enumeration limited to m <= {limit}, got m = {m}")]
    EnumerationLimit { m: usize, limit: usize },
    #[error("invalid warm start: {0}")]
    InvalidWarmStart(String),
    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),
    #[error("singular factor: pivot {pivot} at position {position}")]
    Singular { position: usize, pivot: f64 },
    #[error("empty blocking set")]
    EmptyBlockingSet,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("training labels contain a single class ({0} active constraints)")]
    SingleClass(usize),
    #[error("model is locked to (n, m) = {expected:?}, got {got:?}")]
    SizeLock {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("invalid value for `{field}`: {reason}")]
    InvalidField { field: String, reason: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn field(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidField {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
