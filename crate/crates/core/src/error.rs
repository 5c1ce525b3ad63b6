use thiserror::Error;

use crate::model::Violation;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid network: {}", fmt_violations(.0))]
    Validation(Vec<Violation>),

    #[error("arithmetic overflow while computing {0}")]
    Overflow(&'static str),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty kernel sequence")]
    EmptySequence,

    #[error("workload `{0}` has zero operations and zero bytes")]
    ZeroWork(String),

    #[error("kernel {index} (`{label}`) is compute bound; nothing to gain from reducing its traffic")]
    ComputeBound { index: usize, label: String },

    #[error("kernel index {0} out of range")]
    IndexOutOfRange(usize),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("no efficiency entry for: {}", .0.join(", "))]
    Unresolved(Vec<String>),

    #[error("schedule node {node}: {message}")]
    Schedule { node: usize, message: String },

    #[error("samples row {row}: {message}")]
    Csv { row: usize, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn fmt_violations(v: &[Violation]) -> String {
    v.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
