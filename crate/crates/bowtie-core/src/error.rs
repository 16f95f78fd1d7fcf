use alloc::string::String;

/// Errors raised by the inference engine.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// An argument lies outside the domain of the function.
    #[error("domain error: {0}")]
    Domain(String),
    /// Shapes of vectors or matrices do not agree.
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    /// Configuration or hyperparameters are invalid.
    #[error("invalid configuration: {0}")]
    Config(String),
    /// A numerical invariant broke during a fit (lost positive definiteness,
    /// non-finite objective, ...). These are not recoverable by retrying.
    #[error("numerical fault in {block}: {detail}")]
    Numerical { block: &'static str, detail: String },
}

pub type Result<T> = core::result::Result<T, Error>;

impl Error {
    pub(crate) fn numerical(block: &'static str, detail: impl Into<String>) -> Self {
        Error::Numerical { block, detail: detail.into() }
    }
}
