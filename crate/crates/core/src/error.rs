use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("integration failure: vehicle {vehicle} slowness {slowness:e} at step {step}")]
    Integration { vehicle: usize, step: usize, slowness: f64 },
    #[error("vehicle {vehicle} stalled at {position:.3} m")]
    Stall { vehicle: usize, position: f64 },
    #[error("backward pass failed at step {step}: Q_uu not positive definite (regularization {regularization:e})")]
    BackwardPass { step: usize, regularization: f64 },
    #[error("receding-horizon window at {position:.1} m failed: {source}")]
    Window {
        position: f64,
        #[source]
        source: Box<Error>,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
