use std::path::PathBuf;

use thiserror::Error;

use crate::linalg::LinalgError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("shape mismatch in {what}: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        what: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("matrix rank exceeds {r}: sigma_{{r+1}} = {sigma:e}")]
    RankTooHigh { r: usize, sigma: f64 },
    #[error("invalid dimensions: {0}")]
    Dimension(String),
    #[error("step too large: eta * ||R~|| = {eta_norm} exceeds 2/3")]
    StepTooLarge { eta_norm: f64 },
    #[error("aligned block lost rank: sigma_r(A) = {sigma_r:e}")]
    RankDeficient { sigma_r: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("at step {k}: {source}")]
    AtStep {
        k: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn at_step(self, k: usize) -> Self {
        match self {
            e @ Error::AtStep { .. } => e,
            e => Error::AtStep {
                k,
                source: Box::new(e),
            },
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| Error::Io { path, source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
