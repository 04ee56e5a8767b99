use thiserror::Error;

#[derive(Debug, Error)]
pub enum DppError {
    #[error("invalid subset: {0}")]
    InvalidSubset(String),

    #[error("conditioning set is degenerate: its Gram matrix is singular")]
    DegenerateConditioning,

    #[error("catalog of {n} items exceeds the brute-force cap of {cap}")]
    CatalogTooLarge { n: usize, cap: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("model file version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, DppError>;
