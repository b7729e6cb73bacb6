use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A model or experiment was declared inconsistently.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("integration failed at step {step}: {message}")]
    Integration { step: usize, message: String },

    #[error("girsanov weight failed at step {step}: {message}")]
    Weight { step: usize, message: String },

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("novikov partition failed: {0}")]
    Partition(String),

    #[error("pde solver failed: {0}")]
    Solver(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
