use std::path::PathBuf;

use thiserror::Error;

use crate::query::QueryError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid class table: {0}")]
    InvalidClassTable(String),

    #[error("class id {id} is not in the class table ({n_classes} classes)")]
    UnknownClassId { id: u16, n_classes: usize },

    #[error("unknown class label `{0}`")]
    UnknownClassLabel(String),

    #[error("invalid box {0:?}: need 0 <= min < max <= 1 on both axes")]
    InvalidBox([f64; 4]),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("grid size mismatch: {0} vs {1}")]
    GridMismatch(usize, usize),

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("query shape: {0}")]
    QueryShape(String),

    #[error(transparent)]
    Query(#[from] QueryError),

    #[error("insufficient sample: {0}")]
    InsufficientSample(String),

    #[error("degenerate control: {0}")]
    DegenerateControl(String),

    #[error("ill-conditioned controls (condition number {condition:.3e}); drop a control")]
    IllConditioned { condition: f64 },

    #[error("sampling: {0}")]
    Sampling(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error("total cost is zero, speedup undefined")]
    ZeroCost,

    #[error("{path}:{line}: {message}")]
    Annotation { path: PathBuf, line: usize, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
