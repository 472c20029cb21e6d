use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("failed to ingest {}: {message}", path.display())]
    Ingest { path: PathBuf, message: String },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("domain `{domain}` has only {count} examples (at least 4 required)")]
    TooFewExamples { domain: String, count: usize },

    #[error("requested {requested} subsets of size {size} but only {available} exist")]
    NotEnoughSubsets {
        requested: usize,
        size: usize,
        available: u128,
    },

    #[error("domain `{0}` has no embedded utterances")]
    MissingEmbeddings(String),

    #[error("record `{id}` has dimension {found}, expected {expected}")]
    DimensionMismatch {
        id: String,
        expected: usize,
        found: usize,
    },

    #[error("record `{0}` contains a non-finite component")]
    NonFinite(String),

    #[error("unknown domain `{0}`")]
    UnknownDomain(String),

    #[error("refusing brute-force enumeration over {n} nodes (limit is {limit})")]
    TooManyNodes { n: usize, limit: usize },

    #[error("model has no labels")]
    NoLabels,

    #[error("label `{0}` is not in the label space")]
    UnknownLabel(String),

    #[error("loss became non-finite at epoch {epoch} (learning rate {learning_rate})")]
    Divergence { epoch: usize, learning_rate: f64 },

    #[error("evaluation set is empty")]
    EmptyEvalSet,

    #[error("accuracy matrix: {0}")]
    Matrix(String),

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("run `{run_id}` failed: {source}")]
    Run {
        run_id: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the CLI: 2 config, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Divergence { .. } | Error::Quadrature(_) => 4,
            Error::Run { source, .. } => source.exit_code(),
            _ => 3,
        }
    }
}
