use thiserror::Error;

#[derive(Debug, Error)]
pub enum AolError {
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },

    #[error("missing required column `{0}`")]
    MissingColumn(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected} covariates, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("degenerate treatment arms: {0}")]
    DegenerateArm(String),

    #[error("no matched subjects")]
    NoMatchedSubjects,

    #[error("solver failed at iteration {iteration}: {message}")]
    Solver { iteration: usize, message: String },

    #[error("could not build folds containing both arms after {0} attempts")]
    Folding(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, AolError>;
