use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot((usize, usize)),

    #[error("empty sequence passed to {0}")]
    EmptySequence(&'static str),

    #[error("node {0} has no outgoing edges")]
    IsolatedNode(usize),

    #[error("sampling failed: {0}")]
    Sampling(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("dataset error: {0}")]
    Data(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("training step {step} failed: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures that originate in floating point arithmetic,
    /// including those wrapped by the trainer with a step index.
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::Numeric(_) => true,
            Error::Step { source, .. } => source.is_numeric(),
            _ => false,
        }
    }
}
