use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read or write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),

    #[error("malformed image data: {0}")]
    Malformed(String),

    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("pseudo-segment set is empty")]
    EmptySegmentSet,

    #[error("cannot sample {requested} segments from a set of {available}")]
    TooManySegments { requested: usize, available: usize },

    #[error("no foreground region detected")]
    EmptyRegion,

    #[error("position policy `ibr` requires a bounded region")]
    MissingRegion,

    #[error("irregular mask store {0} contains no mask images")]
    EmptyMaskStore(PathBuf),

    #[error("region of interest is empty")]
    EmptyRoi,

    #[error("mask covers the entire image; nothing to diffuse from")]
    FullMask,

    #[error("dataset {0} contains no images")]
    EmptyDataset(PathBuf),

    #[error("patient list is empty")]
    NoPatients,

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
