use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("coordinate out of domain: lon={lon}, lat={lat}")]
    Domain { lon: f64, lat: f64 },

    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch { expected: Vec<usize>, found: Vec<usize> },

    #[error(transparent)]
    Container(#[from] crate::ingest::container::ContainerError),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("could not find {wanted} windows with at least one resource after {attempts} attempts")]
    SamplingBudgetExceeded { wanted: usize, attempts: usize },

    #[error("requested {requested} centers but only {distinct} distinct points are available")]
    TooFewPoints { requested: usize, distinct: usize },

    #[error("cholesky factorization failed after jitter escalation to {jitter:e}")]
    Factorization { jitter: f64 },

    #[error("non-finite ELBO at step {step}: {value}")]
    NonFiniteElbo { step: usize, value: f64 },

    #[error("every threshold produced an undefined Dice coefficient")]
    AllUndefined,

    #[error("prediction lattice is misaligned: {0}")]
    MisalignedLattice(String),

    #[error("model failure: {0}")]
    Model(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
