use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch at node {node}: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        node: usize,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("tensor of shape {shape:?} needs {expected} values, got {found}")]
    BadTensor {
        shape: Vec<usize>,
        expected: usize,
        found: usize,
    },

    #[error("no binding supplied for leaf slot {0}")]
    MissingBinding(usize),

    #[error("non-finite value produced at node {0}")]
    NonFinite(usize),

    #[error("node {0} is not a scalar")]
    NotScalar(usize),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("infeasible transport: {0}")]
    Infeasible(String),

    /// Assumption violations that leave a bound undefined (A in {0,1}, W0 <= V0, ...).
    #[error("degenerate quantity: {0}")]
    Degenerate(String),

    #[error("training diverged at epoch {epoch}, batch {batch}")]
    Diverged {
        epoch: usize,
        batch: usize,
        /// Last parameters with a finite loss.
        snapshot: Box<crate::model::Network>,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Numeric degeneracies map to CLI exit code 2, everything else to 1.
    pub fn is_degenerate(&self) -> bool {
        matches!(
            self,
            Error::Degenerate(_) | Error::NonFinite(_) | Error::Diverged { .. }
        )
    }
}
