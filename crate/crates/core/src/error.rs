use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("texture file not found: {0}")]
    MissingTexture(PathBuf),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("shape mismatch: {left:?} vs {right:?} ({context})")]
    ShapeMismatch {
        left: Vec<usize>,
        right: Vec<usize>,
        context: &'static str,
    },
    #[error("empty result: {0}")]
    EmptyResult(String),
    #[error("backward called without a recorded forward pass ({0})")]
    NoForwardRecord(&'static str),
    #[error("parameter mismatch: {0}")]
    ParamMismatch(String),
    #[error("weight file: {0}")]
    WeightFormat(String),
    #[error("model mismatch: {0}")]
    ModelMismatch(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("image: {0}")]
    Image(#[from] image::ImageError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. }
            | Error::MissingTexture(_)
            | Error::InvalidInput(_)
            | Error::Image(_)
            | Error::Json(_)
            | Error::EmptyResult(_) => 2,
            Error::ModelMismatch(_)
            | Error::WeightFormat(_)
            | Error::ParamMismatch(_)
            | Error::ShapeMismatch { .. } => 3,
            Error::Numerical(_) => 4,
            Error::NoForwardRecord(_) | Error::Io { .. } => 1,
        }
    }
}
