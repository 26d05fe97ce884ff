use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{context}: dimension mismatch, expected {expected} but got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    /// `y_k - B_k` was odd, which only happens when a threshold was folded
    /// against the wrong fan-in parity.
    #[error("parity violation at column {column}: y - B = {difference} is odd")]
    Parity { column: usize, difference: i64 },

    #[error("threshold {value} at column {column} is not even")]
    OddThreshold { column: usize, value: i64 },

    #[error("threshold {value} at column {column} is outside [-{limit}, {limit}]")]
    ThresholdRange { column: usize, value: i64, limit: i64 },

    #[error("weight matrix needs an even, non-zero row count, got {0}")]
    OddFanIn(usize),

    #[error("batch-norm channel {channel} is degenerate ({reason})")]
    DegenerateChannel { channel: usize, reason: &'static str },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("bad magic in {what}: expected {expected:#010x}, found {found:#010x}")]
    BadMagic {
        what: &'static str,
        expected: u32,
        found: u32,
    },

    #[error("{what} is truncated: expected {expected} bytes, got {actual}")]
    Truncated {
        what: &'static str,
        expected: u64,
        actual: u64,
    },

    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },

    #[error("model format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn dims(context: &'static str, expected: usize, actual: usize) -> Self {
        Error::DimensionMismatch {
            context,
            expected,
            actual,
        }
    }
}

/// Returns a `DimensionMismatch` unless `expected == actual`.
pub(crate) fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::dims(context, expected, actual))
    }
}
