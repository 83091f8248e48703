use thiserror::Error;

use crate::okp::Space;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("degenerate frame: {0}")]
    DegenerateFrame(String),

    #[error("not a proper rotation matrix (orthonormality error {ortho:.3e}, det {det})")]
    NotARotation { ortho: f64, det: f64 },

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("incomplete keypoints: missing indices {0:?}")]
    IncompleteKeypoints(Vec<usize>),

    #[error("coordinate space mismatch: {left} vs {right}")]
    SpaceMismatch { left: Space, right: Space },

    #[error("count mismatch for {what}: expected {expected}, found {found}")]
    CountMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("all {count} frames failed; first error: {first}")]
    AllFramesFailed { count: usize, first: String },

    #[error("{context}: {message}")]
    Format { context: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn format(context: impl Into<String>, message: impl std::fmt::Display) -> Self {
        Error::Format {
            context: context.into(),
            message: message.to_string(),
        }
    }

    pub(crate) fn count(what: &'static str, expected: usize, found: usize) -> Self {
        Error::CountMismatch {
            what,
            expected,
            found,
        }
    }
}
