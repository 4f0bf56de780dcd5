use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Parameters outside the domain of a density family or operation.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Quadrature or root finding failed to converge.
    #[error("numeric failure: {0}")]
    NumericFailure(String),

    /// The cube partition of a ball has no inner cell.
    #[error("insufficient resolution: no grid cube of side {side} fits inside B(0, {radius})")]
    InsufficientResolution { side: f64, radius: f64 },

    /// A configuration document failed to parse or validate; `pointer` is a JSON pointer.
    #[error("invalid config at `{pointer}`: {message}")]
    Config { pointer: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::NumericFailure(msg.into())
    }

    /// Whether the error stems from numerics rather than from user input.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NumericFailure(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
