use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown class `{0}`")]
    UnknownClass(String),

    #[error("unknown bag `{0}`")]
    UnknownBag(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("infeasible selection for class `{class}`: {reason}")]
    Infeasible { class: String, reason: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("label {label} out of range for node {node} with {num_labels} labels")]
    LabelOutOfRange {
        node: usize,
        label: usize,
        num_labels: usize,
    },

    #[error("pair drawn from a single bag (`{0}`)")]
    SameBagPair(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("instance too large for exhaustive search: {0} labelings")]
    TooLarge(u128),

    #[error("missing data: {0}")]
    Missing(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
