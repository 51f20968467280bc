use std::path::PathBuf;

use thiserror::Error;

use crate::corpus::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: malformed row: {reason}")]
    Malformed { line: usize, reason: String },

    #[error("line {line}: unknown label {label:?}")]
    UnknownLabel { line: usize, label: String },

    #[error("line {line}: inconsistent path: {child:?} is not a child of {parent:?} (its parent is {expected:?})")]
    InconsistentPath {
        line: usize,
        child: String,
        parent: String,
        expected: String,
    },

    #[error("no documents")]
    NoDocuments,

    #[error("invalid taxonomy: {}", join_violations(.0))]
    InvalidTaxonomy(Vec<Violation>),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("empty sequence")]
    EmptySequence,

    #[error("empty corpus: {0}")]
    EmptyCorpus(String),

    #[error("node {node:?} has fewer than 2 classes present in the training data")]
    InsufficientClasses { node: String },

    #[error("class {class} has no training samples")]
    ClassAbsent { class: usize },

    #[error("config: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("gradient check failed: max relative error {max_rel_error:e} exceeds {tolerance:e}")]
    GradCheck { max_rel_error: f64, tolerance: f64 },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-parseable class used by the command line front end.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Malformed { .. }
            | Error::UnknownLabel { .. }
            | Error::InconsistentPath { .. }
            | Error::NoDocuments
            | Error::InvalidTaxonomy(_)
            | Error::EmptyCorpus(_) => "data",
            Error::InvalidArgument(_) => "argument",
            Error::Shape(_) | Error::NonFinite(_) | Error::EmptySequence | Error::GradCheck { .. } => "numeric",
            Error::InsufficientClasses { .. } | Error::ClassAbsent { .. } => "training",
            Error::Config(_) => "config",
            Error::Checkpoint(_) => "checkpoint",
            Error::Json(_) | Error::Csv(_) => "format",
        }
    }
}

fn join_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
