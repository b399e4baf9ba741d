//! Crate-wide error type.

use std::fmt;

#[derive(Debug)]
pub enum Error {
    /// Dimension mismatch; names the operation and both offending shapes.
    Shape {
        op: &'static str,
        expected: String,
        found: String,
    },
    /// A caller broke an operation's precondition.
    Contract(String),
    /// Token id outside the vocabulary.
    Vocab { id: usize, size: usize },
    /// File-format violation (bad magic, version, truncation).
    Format(String),
    /// Invalid configuration key or value.
    Config(String),
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { op, expected, found } => {
                write!(f, "{op}: dimension mismatch, expected {expected}, found {found}")
            }
            Error::Contract(msg) => write!(f, "contract violation: {msg}"),
            Error::Vocab { id, size } => {
                write!(f, "token id {id} outside vocabulary of size {size}")
            }
            Error::Format(msg) => write!(f, "format error: {msg}"),
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
