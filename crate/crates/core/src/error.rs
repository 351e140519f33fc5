use thiserror::Error;

/// Errors raised by the numeric kernels, color pipeline and file formats.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("{what} out of domain at index {index}: {value}")]
    Domain {
        what: &'static str,
        index: usize,
        value: f64,
    },

    #[error("wrong color tag for {op}: expected {expected}, found {found}")]
    Tag {
        op: &'static str,
        expected: String,
        found: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value in {op} at index {index}")]
    NonFinite { op: &'static str, index: usize },

    #[error("index {index} out of range for {what} (len {len})")]
    Index {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Iterative fit broke down; `trace` holds the losses seen so far.
    #[error("fit diverged: {reason}")]
    Diverged { reason: String, trace: Vec<f64> },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Dimension {
        op,
        detail: detail.into(),
    }
}
