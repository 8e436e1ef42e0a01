use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("training diverged at epoch {epoch}: {reason}")]
    TrainingDiverged { epoch: usize, reason: String },

    #[error("budget exhausted")]
    BudgetExhausted,

    #[error("no affordable question kind has enough candidates")]
    NoFeasibleQuestion,

    #[error("no safe question available: both regions are empty")]
    NoSafeQuestion,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("label {0:?} in holdout never occurs in the pool")]
    UnseenLabel(String),

    #[error("no question is pending")]
    NoPendingQuestion,

    #[error("answer {answer} is outside the answer set of size {size}")]
    AnswerOutOfRange { answer: usize, size: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
