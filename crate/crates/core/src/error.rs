use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An input violated an operation's precondition.
    #[error("domain error: {0}")]
    Domain(String),

    /// A loss term produced NaN or infinity during training.
    #[error("non-finite {term} loss at iteration {iteration}")]
    NonFinite {
        term: &'static str,
        iteration: usize,
    },

    /// A network evaluation hit a non-finite parameter or activation.
    #[error("computation error: {0}")]
    Computation(String),

    /// Buffers or batches whose shapes disagree.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Malformed or truncated file contents.
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
