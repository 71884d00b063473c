//! Error type shared across the engine.

use std::fmt;

/// Errors produced by the engine.
#[derive(Debug)]
pub enum Error {
    /// Tensor or grid shapes do not line up.
    Shape(String),
    /// A value fell outside its mathematical domain (e.g. a decay factor
    /// outside (0,1)).
    Domain(String),
    /// An operation was called in the wrong state (e.g. folding batch norm
    /// while it is still training).
    State(String),
    /// A non-finite value surfaced during computation.
    NonFinite(String),
    /// Invalid run or model configuration.
    Config(String),
    /// A file failed to parse; `offset` is the byte position of the problem.
    Parse { offset: u64, message: String },
    /// Invalid or inconsistent input data (unsorted streams, out-of-bounds
    /// events, empty datasets).
    Data(String),
    /// Underlying I/O failure.
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(m) => write!(f, "shape error: {m}"),
            Error::Domain(m) => write!(f, "domain error: {m}"),
            Error::State(m) => write!(f, "state error: {m}"),
            Error::NonFinite(m) => write!(f, "non-finite value: {m}"),
            Error::Config(m) => write!(f, "config error: {m}"),
            Error::Parse { offset, message } => {
                write!(f, "parse error at byte {offset}: {message}")
            }
            Error::Data(m) => write!(f, "data error: {m}"),
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

/// Shorthand for building a shape error.
pub fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}
