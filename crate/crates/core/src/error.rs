use thiserror::Error;

/// Errors produced across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes are incompatible.
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// A model, layer or run configuration is invalid.
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Input data is out of range or malformed.
    #[error("data error: {0}")]
    Data(String),

    /// A serialized artifact failed validation.
    #[error("format error at byte {offset}: {detail}")]
    Format { offset: usize, detail: String },

    /// A non-finite value appeared where finite numbers are required.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension { op, detail: detail.into() }
    }

    pub(crate) fn format(offset: usize, detail: impl Into<String>) -> Self {
        Error::Format { offset, detail: detail.into() }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
