use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid architecture: {0}")]
    Architecture(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    #[error("invalid target value {value} (cross entropy needs targets in {{0, 1}})")]
    InvalidTarget { value: f64 },

    #[error("mixing weights ({se}, {ce}) must be non-negative and sum to 1")]
    MixWeights { se: f64, ce: f64 },

    #[error("degenerate normalization: {0}")]
    DegenerateNorm(String),

    #[error("numeric divergence: {0}")]
    Divergence(String),

    #[error("unknown variant label `{0}`; valid labels: CE100SE0, CE75SE25, CE50SE50, CE25SE75, CE0SE100, CEtoSE, SEtoCE, CEswSE, SEswCE")]
    UnknownVariant(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("{path}: row {row}: {msg}")]
    Parse { path: PathBuf, row: usize, msg: String },

    #[error("{path}: unknown class label `{label}`")]
    UnknownClass { path: PathBuf, label: String },

    #[error("{path}: malformed IDX file: {msg}")]
    IdxFormat { path: PathBuf, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{0}")]
    Report(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::Shape {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
