use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HbdmError {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("node id {id} out of range for side {side} (size {size})")]
    NodeOutOfRange { id: usize, side: u8, size: usize },

    #[error("non-finite value in embedding state: {0}")]
    NonFinite(String),

    #[error(
        "exact likelihood refused: {n} nodes exceeds the cap of {cap} (raise the cap to override)"
    )]
    ExactCapExceeded { n: usize, cap: usize },

    #[error("dimension mismatch: {0}")]
    Mismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("graph is disconnected ({components} components); extract the giant component first (load with the giant-component option)")]
    Disconnected { components: usize },

    #[error("missing labels for {} node(s): {}", .0.len(), .0.join(", "))]
    MissingLabels(Vec<String>),

    #[error("{0}")]
    Unsupported(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = HbdmError> = std::result::Result<T, E>;
