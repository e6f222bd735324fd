use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),
    #[error("non-numeric or missing value at data row {0}, column {1}")]
    NonNumericCell(usize, usize),
    #[error("series is empty")]
    EmptySeries,
    #[error("series of length {n} too short for lookback {l} + horizon {t}")]
    SeriesTooShort { n: usize, l: usize, t: usize },
    #[error("channel {0} has zero variance")]
    DegenerateChannel(usize),
    #[error("sequence length {0} is below the minimum of 2")]
    LengthTooSmall(usize),
    #[error("spectrum violates Hermitian symmetry at bin {0}")]
    BrokenHermitianSymmetry(usize),
    #[error("harmonic index {index} out of range for {bins} bins")]
    IndexOutOfRange { index: usize, bins: usize },
    #[error("lag {lag} out of range for length {len}")]
    LagOutOfRange { lag: usize, len: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("loss is not a scalar (shape {0:?})")]
    NonScalarLoss((usize, usize)),
    #[error("loss does not depend on any differentiable leaf")]
    DetachedGraph,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("non-finite loss encountered at step {0}")]
    NonFiniteLoss(usize),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("check failed: {0}")]
    CheckFailed(String),
    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Coarse failure class, used by the command-line front end to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Io,
    Numeric,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidConfig(_) | Error::InvalidSpec(_) => ErrorClass::Config,
            Error::MissingFile(_)
            | Error::NonNumericCell(..)
            | Error::EmptySeries
            | Error::Io(_)
            | Error::Csv(_)
            | Error::Json(_) => ErrorClass::Io,
            _ => ErrorClass::Numeric,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.class() {
            ErrorClass::Config => 1,
            ErrorClass::Io => 2,
            ErrorClass::Numeric => 3,
        }
    }
}
