use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The operation is not defined for this model variant.
    #[error("unsupported variant: {0}")]
    Unsupported(String),

    /// The input sits on a singularity of the function being evaluated.
    #[error("singular input: {0}")]
    Singular(String),

    /// A required input (for example a precomputed curve) is missing.
    #[error("missing dependency: {0}")]
    Dependency(String),

    /// A truncated computation could not reach its tolerance.
    #[error("truncation failure: {message} (states={states}, deficit={deficit:e})")]
    Truncation {
        message: String,
        states: usize,
        deficit: f64,
    },

    /// Reading or writing a file or stream failed, or its contents could not
    /// be parsed.
    #[error("input/output error: {0}")]
    Io(String),

    /// A numerical routine failed (step-size underflow, non-convergence, ...).
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// True for errors caused by a tolerance that could not be met, as
    /// opposed to invalid input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Truncation { .. } | Error::Numerical(_))
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
