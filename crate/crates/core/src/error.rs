use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("voxel index ({i}, {j}, {k}) out of range for resolution {resolution}")]
    VoxelOutOfRange {
        i: u64,
        j: u64,
        k: u64,
        resolution: u64,
    },

    #[error("invalid ray: {0}")]
    InvalidRay(String),

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid compositing input: {0}")]
    Compositing(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("numerical abort: {0}")]
    Numerical(String),

    #[error("empty mesh")]
    EmptyMesh,

    #[error("empty point set: {0}")]
    EmptyPointSet(&'static str),

    #[error("{path}: {message}")]
    File { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn file(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::File {
            path: path.into(),
            message: message.to_string(),
        }
    }
}
