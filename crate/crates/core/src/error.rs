use std::fmt;
use std::io;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors emitted by tensor primitives, the network builder, the data
/// pipeline, and checkpoint I/O.
#[derive(Debug)]
pub enum Error {
    /// Tensor dimensions do not line up for the requested operation.
    Shape { op: &'static str, detail: String },
    /// A configuration value is out of its documented range.
    Config(String),
    /// Caller-supplied data is invalid (labels, probe points, ...).
    Input(String),
    /// Dataset ingestion failed (layout, decoding, mixed formats).
    Ingest(String),
    /// A computation produced or encountered a non-finite value.
    NonFinite(String),
    /// Underlying filesystem failure.
    Io(io::Error),
    /// Checkpoint parsing or validation failure.
    Checkpoint(CheckpointError),
}

/// Distinct checkpoint failure kinds so callers can tell corruption,
/// truncation, and version skew apart.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CheckpointError {
    BadMagic,
    BadVersion { expected: u32, got: u32 },
    BadChecksum { expected: u32, got: u32 },
    Truncated,
    Malformed(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { op, detail } => write!(f, "{op}: shape mismatch: {detail}"),
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
            Error::Input(msg) => write!(f, "invalid input: {msg}"),
            Error::Ingest(msg) => write!(f, "dataset error: {msg}"),
            Error::NonFinite(msg) => write!(f, "non-finite value: {msg}"),
            Error::Io(e) => write!(f, "i/o error: {e}"),
            Error::Checkpoint(e) => write!(f, "checkpoint error: {e}"),
        }
    }
}

impl fmt::Display for CheckpointError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CheckpointError::BadMagic => write!(f, "bad magic (not a checkpoint file)"),
            CheckpointError::BadVersion { expected, got } => {
                write!(f, "unsupported version {got} (expected {expected})")
            }
            CheckpointError::BadChecksum { expected, got } => {
                write!(f, "crc mismatch (stored {expected:#010x}, computed {got:#010x})")
            }
            CheckpointError::Truncated => write!(f, "file truncated"),
            CheckpointError::Malformed(msg) => write!(f, "malformed payload: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<io::Error> for Error {
    fn from(e: io::Error) -> Self {
        Error::Io(e)
    }
}

impl From<CheckpointError> for Error {
    fn from(e: CheckpointError) -> Self {
        Error::Checkpoint(e)
    }
}
