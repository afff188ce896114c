use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("domain error: {0}")]
    Domain(String),

    /// Two atoms sit on top of each other (or closer than the kernel allows).
    #[error("singular kernel: {0}")]
    SingularKernel(String),

    #[error("problem too large: {0}")]
    TooLarge(String),

    /// An internal consistency check failed (imaginary residue, trace drift, ...).
    #[error("numerical consistency failure: {0}")]
    Numerical(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
