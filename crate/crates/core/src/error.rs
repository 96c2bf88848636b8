use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("stratification error: {0}")]
    Stratification(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("node system singular after ridge escalation (final ridge {ridge:e})")]
    SingularNode { ridge: f64 },

    #[error("training error: {0}")]
    Train(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("logistic regression diverged (coefficient norm {norm:e}); labels look perfectly separated")]
    Separation { norm: f64 },

    #[error("argument out of domain: {0}")]
    Domain(String),

    #[error("numerical error at mu2 = {mu2}: {msg}")]
    Numerical { mu2: f64, msg: String },

    #[error("group error: {0}")]
    Group(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
