use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid shape: {0}")]
    ShapeError(String),
    #[error("matrix entries must be finite")]
    NonFinite,
    #[error("operand has zero Frobenius norm")]
    ZeroMatrix,
    #[error("matrix is not symmetric (asymmetry {asymmetry:.3e})")]
    NotSymmetric { asymmetry: f64 },
    #[error("matrix is not positive semi-definite (eigenvalue {eigenvalue:.3e})")]
    NotPsd { eigenvalue: f64 },
    #[error("indefinite input: eigenvalue {eigenvalue:.3e} below clamp threshold {threshold:.3e}")]
    IndefiniteInput { eigenvalue: f64, threshold: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{0} did not converge")]
    NoConvergence(&'static str),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("network output is not scalar")]
    NonScalarOutput,
    #[error("need at least two layers, got {0}")]
    TooShallow(usize),
    #[error("trace has {got} usable points, need at least {need}")]
    InsufficientTrace { got: usize, need: usize },
    #[error("weight decay must be positive for asymptotic checks, got {0}")]
    InsufficientDecay(f64),
    #[error("training diverged at epoch {epoch}")]
    DivergenceDetected { epoch: usize },
    #[error("invalid config: {0}")]
    ConfigInvalid(String),
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
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
