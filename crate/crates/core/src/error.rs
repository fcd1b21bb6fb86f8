use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor extents do not line up for an operation. Carries a dimension report.
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// An argument violates an operation precondition.
    #[error("invalid argument for {op}: {detail}")]
    InvalidArg { op: &'static str, detail: String },

    /// A value that must be finite is NaN or infinite.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// Dataset container or manifest is invalid.
    #[error("dataset error: {0}")]
    Dataset(String),

    /// A file failed its integrity checks.
    #[error("corrupt file {path}: {detail}")]
    Corrupt { path: String, detail: String },

    /// Training aborted because the loss left the finite range.
    #[error("training diverged at episode {episode} (seed {seed}): {detail}")]
    Diverged { episode: usize, seed: u64, detail: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub fn invalid(op: &'static str, detail: impl Into<String>) -> Self {
        Error::InvalidArg { op, detail: detail.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
