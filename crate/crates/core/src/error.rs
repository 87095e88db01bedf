use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),
    #[error("duplicate edge {{{0}, {1}}}")]
    DuplicateEdge(usize, usize),
    #[error("self-loop at node {0}")]
    SelfLoop(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid cluster assignment: {0}")]
    InvalidAssignment(String),
    #[error("block size {block} does not divide lattice side {side}")]
    NonDivisibleBlock { side: usize, block: usize },
    #[error("loss must be a 1x1 tensor, got {0}x{1}")]
    LossNotScalar(usize, usize),
    #[error("loss mask selects no nodes")]
    EmptyMask,
    #[error("instance generation exhausted after {0} graph draws")]
    GenerationExhausted(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error("malformed record: {0}")]
    Format(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Process exit code: 1 for validation or configuration problems, 2 for
    /// runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) | Error::GenerationExhausted(_) => 2,
            _ => 1,
        }
    }
}
