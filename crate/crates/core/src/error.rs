use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in `{op}`: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("domain error in `{op}`: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("backward requires a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("singular Jacobian in `{0}`: |det| below 1e-12")]
    SingularJacobian(&'static str),

    #[error("numeric inversion of `{flow}` did not converge after {iterations} iterations")]
    InversionDiverged { flow: &'static str, iterations: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("dataset generation failed: {0}")]
    GenerationFailed(String),

    #[error("malformed manifest: {0}")]
    ManifestError(String),

    #[error("truncated binary `{file}`: expected {expected} bytes, found {actual}")]
    TruncatedData {
        file: String,
        expected: u64,
        actual: u64,
    },

    #[error("shape inconsistency in dataset: {0}")]
    DatasetShape(String),

    #[error("training diverged in fold {fold} at epoch {epoch}: {part} is not finite")]
    TrainingDiverged {
        fold: usize,
        epoch: usize,
        part: String,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
