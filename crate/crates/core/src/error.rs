use std::path::PathBuf;

use crate::signal::edf::EdfError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("input of length {len} is shorter than the minimum accepted length {min}")]
    InsufficientLength { len: usize, min: usize },

    #[error("input length {len} is not a multiple of the segment width {segment}")]
    SegmentAlignment { len: usize, segment: usize },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("batch normalization `{0}` has no running statistics")]
    UninitializedStatistics(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("label error: {0}")]
    Label(String),

    #[error("unknown stage token `{0}`")]
    Vocabulary(String),

    #[error("invalid model configuration: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("cross-validation plan error: {0}")]
    Plan(String),

    #[error("trim error: {0}")]
    Trim(String),

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Edf(#[from] EdfError),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }
}
