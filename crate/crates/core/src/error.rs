use std::io;

/// Errors raised across the crate.
///
/// The variants map one-to-one onto the CLI exit codes: argument problems are
/// usage errors, format and I/O problems are data errors, and contract
/// violations flag inputs that break a documented invariant.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("unsupported image: {0}")]
    UnsupportedImage(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn violation(msg: impl Into<String>) -> Error {
    Error::ContractViolation(msg.into())
}
