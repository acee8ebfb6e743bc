use std::path::PathBuf;

use thiserror::Error;

use crate::graph::{GraphError, ParseError};

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("no training data")]
    EmptyTrainingData,
    #[error("query with {0} triples exceeds the substructure enumeration cap of {1}")]
    TooManyTriples(usize, usize),
    #[error("no probability for frequent substructure {0}")]
    MissingProbability(String),
    #[error("{path}:{line}: {msg}")]
    Format { path: PathBuf, line: usize, msg: String },
    #[error("aggregate over non-numeric value {0:?}")]
    NonNumericAggregate(String),
    #[error("query has no target vertex to project")]
    UnboundTarget,
    #[error("variable {0} is not bound by any pattern triple")]
    UnboundVariable(usize),
    #[error("query still contains placeholder {0}")]
    Ungrounded(String),
    #[error("no structure produced a valid non-empty query")]
    NoValidGrounding,
    #[error("configuration: {0}")]
    Config(String),
    #[error("model file: {0}")]
    Model(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn read_file(path: &std::path::Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_owned(), source })
}

pub(crate) fn write_file(path: &std::path::Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|source| Error::Io { path: path.to_owned(), source })
}
