use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// The annotation document could not be decoded.
    #[error("parse error in {record}: {message}")]
    Parse { record: String, message: String },

    /// Geometry or identity violates an annotation invariant.
    #[error("invalid annotation for image `{image_id}` ({element}): {message}")]
    Validation {
        image_id: String,
        element: String,
        message: String,
    },

    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    Dimension {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A predictor returned output that does not fit the stitching layout.
    #[error("predictor output for frame {frame}, patch {patch}: {message}")]
    Predictor {
        frame: usize,
        patch: usize,
        message: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error on {path}: {message}")]
    Codec { path: PathBuf, message: String },

    #[error("malformed file {path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the environment (files, codecs) rather than
    /// by the content of the inputs.
    pub fn is_io(&self) -> bool {
        matches!(
            self,
            Error::Io { .. } | Error::Codec { .. } | Error::Format { .. }
        )
    }
}
