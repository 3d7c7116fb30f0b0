use thiserror::Error;

#[derive(Debug, Error)]
pub enum CamulError {
    #[error("validation failed: {0}")]
    Validation(String),

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape { context: &'static str, expected: String, actual: String },

    #[error("series `{series}` has {len} steps but at least {required} are required")]
    SeriesTooShort { series: String, len: usize, required: usize },

    #[error("category index {index} is outside the vocabulary of size {size}")]
    OutOfVocabulary { index: usize, size: usize },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("confidence level {0} is outside (0, 1)")]
    InvalidLevel(f64),

    #[error("unknown series id `{0}`")]
    UnknownSeries(String),

    #[error("training diverged at epoch {epoch}: {detail}")]
    Divergence { epoch: usize, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, CamulError>;

pub(crate) fn shape_err(context: &'static str, expected: impl ToString, actual: impl ToString) -> CamulError {
    CamulError::Shape { context, expected: expected.to_string(), actual: actual.to_string() }
}
