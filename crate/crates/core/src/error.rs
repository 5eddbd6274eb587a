use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty evaluation set")]
    EmptyEvaluationSet,
    #[error("empty validation set")]
    EmptyValidationSet,
    #[error("degenerate split: training size {train_size} for n = {n}")]
    DegenerateSplit { n: usize, train_size: usize },
    #[error("empty rule family")]
    EmptyFamily,
    #[error("empty split plan")]
    EmptyPlan,
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("invalid index set: {0}")]
    InvalidIndexSet(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("malformed input at line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
