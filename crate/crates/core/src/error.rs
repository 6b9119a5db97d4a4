use thiserror::Error;

/// Errors raised by the analysis routines and the ingestion layer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {what} at row {row}, column {col}")]
    NonFinite {
        what: &'static str,
        row: usize,
        col: usize,
    },

    #[error("missing required field `{0}`")]
    MissingField(&'static str),

    #[error("malformed csv {path}: {message}")]
    Csv { path: String, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Stable machine-readable code printed by the command-line front end.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "E_INPUT",
            Error::DimensionMismatch { .. } => "E_DIMENSION",
            Error::NonFinite { .. } => "E_NONFINITE",
            Error::MissingField(_) => "E_MISSING_FIELD",
            Error::Csv { .. } => "E_CSV",
            Error::Io { .. } => "E_IO",
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
