use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("index {index} out of range (len {len}) for {what}")]
    Range {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("surface does not intersect the grid (empty band)")]
    EmptyBand,

    #[error("region growth cannot reach {0} body node(s)")]
    Unreachable(usize),

    #[error("diffusion: {0} interior node(s) have no path to boundary data")]
    Disconnected(usize),

    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },

    #[error("simulation produced non-finite state at step {0}")]
    NonFinite(usize),

    #[error("bad file format in {path:?}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            detail: detail.into(),
        }
    }
}
