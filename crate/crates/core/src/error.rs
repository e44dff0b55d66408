use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed model: dimension mismatch, NaN or negative probabilities.
    #[error("structural error: {0}")]
    Structural(String),

    /// Bad user input (unknown symbol, empty sequence, out-of-range flag).
    #[error("input error: {0}")]
    Input(String),

    #[error("estimation error: {0}")]
    Estimation(String),

    /// The model parsed but failed one or more mandatory checks.
    #[error("model validation failed: {0}")]
    Validation(String),

    /// The model violates a hypothesis the computation relies on
    /// (e.g. a ladder family that does not converge to a proper law).
    #[error("model hypothesis violated: {0}")]
    Hypothesis(String),

    #[error("numeric error in {context}: {message} (residual {residual:e})")]
    Numeric {
        context: &'static str,
        message: String,
        residual: f64,
    },

    /// Two independent routes to the same quantity disagree.
    #[error("internal consistency error: {0}")]
    Consistency(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("range error: {0}")]
    Range(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn numeric(context: &'static str, message: impl Into<String>, residual: f64) -> Self {
        Error::Numeric {
            context,
            message: message.into(),
            residual,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) | Error::Parse(_) | Error::Input(_) | Error::Estimation(_) => 1,
            Error::Structural(_) | Error::Validation(_) | Error::Hypothesis(_) => 2,
            Error::Numeric { .. } | Error::Consistency(_) | Error::Range(_) => 3,
            Error::Unsupported(_) => 4,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(std::io::Error::other(e.to_string()))
    }
}
