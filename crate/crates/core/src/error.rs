use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{kind}: shape mismatch {lhs:?} vs {rhs:?}")]
    Shape {
        kind: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("unknown operation kind `{0}`")]
    UnknownOp(String),
    #[error("{kind}: invalid attribute: {msg}")]
    Attr { kind: &'static str, msg: String },
    #[error("backward: {0}")]
    Backward(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("unrecognized format: {0}")]
    Format(String),
    #[error("truncated payload: {0}")]
    Truncated(String),
    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
