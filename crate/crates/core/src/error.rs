use thiserror::Error;

/// Errors raised anywhere in the detection pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke a precondition (shape mismatch, bad arity, wrong state).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A computation produced NaN or infinity.
    #[error("numeric error{}: {message}", layer.map(|l| format!(" at layer {l}")).unwrap_or_default())]
    Numeric {
        message: String,
        layer: Option<usize>,
    },

    /// A distribution or model parameter is out of range.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// No closed-form density is available for the requested noise model.
    #[error("unsupported density: {0}")]
    UnsupportedDensity(String),

    /// Inconsistent configuration (missing checkpoint, dimension mismatch, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// A file could not be decoded.
    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },

    /// Training blew up.
    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric {
            message: msg.into(),
            layer: None,
        }
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
