use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("{path}: file contains no records")]
    EmptyFile { path: PathBuf },

    #[error("{path}:{line}: rating {value} outside scale [{min}, {max}]")]
    RatingOutOfScale {
        path: PathBuf,
        line: u64,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate distribution: {0}")]
    DegenerateDistribution(String),

    #[error("numerical degeneracy: {0}")]
    NumericalDegeneracy(String),

    #[error("training diverged in epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },

    #[error("unknown trainer `{0}`")]
    UnknownTrainer(String),

    #[error("malformed model file: {0}")]
    ModelFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
