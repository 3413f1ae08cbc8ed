use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("inverse kinematics did not converge after {iterations} iterations (position residual {position_residual:.3e} m, orientation residual {orientation_residual:.3e} rad)")]
    IkFailed {
        iterations: usize,
        position_residual: f64,
        orientation_residual: f64,
    },

    #[error("rank-deficient direction matrix (rank {rank} < 3)")]
    RankDeficient { rank: usize },

    #[error("failed to parse {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
