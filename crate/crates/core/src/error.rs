use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Sinkhorn iterations failed to reach the row-sum tolerance.
    #[error(
        "matrix could not be scaled to doubly stochastic form \
         ({iterations} iterations, max row error {max_row_err:.3e})"
    )]
    NotScalable { iterations: usize, max_row_err: f64 },

    /// Pruning removed so many nodes that nothing testable is left.
    #[error("degenerate graph: {0}")]
    Degenerate(String),

    #[error("component {component} is not positive semidefinite (eigenvalue {value:.3e})")]
    NotPsd { component: usize, value: f64 },

    #[error("second eigenvalue {0} is not strictly below 1")]
    NoSpectralGap(f64),

    #[error("LAPACK routine {routine} failed with info = {info}")]
    Lapack { routine: &'static str, info: i32 },

    #[error("epsilon net contains no hypotheses")]
    EmptyNet,

    #[error("{labels} labels supplied for a graph with {nodes} nodes")]
    LabelMismatch { labels: usize, nodes: usize },

    #[error("{}:{line}: {msg}", path.display())]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
