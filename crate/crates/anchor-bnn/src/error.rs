use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),

    #[error("input shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("numeric overflow: non-finite values encountered in {0}")]
    NumericOverflow(String),

    #[error("invalid functional prior: {0}")]
    InvalidPrior(String),

    #[error("Gram matrix factorization failed after jitter escalation (last jitter {last_jitter:e})")]
    Factorization { last_jitter: f64 },

    #[error("degenerate least-squares fit: {0}")]
    DegenerateFit(String),

    #[error("ensemble must contain at least {required} members, got {got}")]
    InsufficientEnsemble { required: usize, got: usize },

    #[error("members were not pre-trained from a shared initialization (token {got:#x} != {expected:#x})")]
    SharedInitMismatch { expected: u64, got: u64 },

    #[error("training failure in member {member}: {detail}")]
    TrainingFailure { member: usize, detail: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
