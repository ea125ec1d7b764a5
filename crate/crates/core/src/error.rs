use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("{path}:{line}: {msg}")]
    MeshFile {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("space mismatch: {0}")]
    SpaceMismatch(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("linear solve failed: {0}")]
    Solve(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("problem `{0}` has no exact solution")]
    NoExactSolution(String),

    #[error("unknown problem `{0}`")]
    UnknownProblem(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
