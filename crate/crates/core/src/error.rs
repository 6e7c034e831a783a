use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: term id {id} is outside the vocabulary of size {vocab_size}")]
    TermOutOfRange {
        line: usize,
        id: usize,
        vocab_size: usize,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("cannot split {docs} documents into {folds} folds")]
    InvalidFolds { docs: usize, folds: usize },
    #[error("node {0} does not exist in the tree")]
    MissingNode(u32),
    #[error("count underflow at node {node} for term {term}")]
    CountUnderflow { node: u32, term: u32 },
    #[error("document {0} is not assigned to a path")]
    Unassigned(usize),
    #[error("all weights are -inf")]
    NoFiniteWeight,
    #[error("empty input")]
    EmptyInput,
    #[error("series has zero variance")]
    ZeroVariance,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
