use std::io;

use thiserror::Error;

/// Errors raised anywhere in the engine, data path, or harness.
#[derive(Debug, Error)]
pub enum Error {
    /// Caller-supplied data violates a precondition (bad index, bad label).
    #[error("input error: {0}")]
    Input(String),
    /// Inconsistent configuration: dimensions, ranges, unknown keys.
    #[error("configuration error: {0}")]
    Config(String),
    /// Non-finite values where finite values are required.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// Malformed text input, with 1-based line number.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    /// Malformed binary snapshot.
    #[error("snapshot format error: {0}")]
    Format(String),
    /// Internal contract broken by a caller (e.g. forward mode in CIL).
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Input(_) | Error::Parse { .. } | Error::Format(_) => 3,
            Error::Numeric(_) => 4,
            Error::Contract(_) | Error::Io(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn input<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Input(msg.into()))
}

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

pub(crate) fn contract<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Contract(msg.into()))
}
