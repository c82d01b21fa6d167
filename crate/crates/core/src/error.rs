use std::path::PathBuf;

use crate::model::NodeId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A probability or other bounded quantity was outside its domain.
    #[error("{what} = {value} is outside its domain {domain}")]
    Domain {
        what: &'static str,
        value: f64,
        domain: &'static str,
    },

    /// The instance is structurally malformed (unknown nodes, self-loops, bad edge kinds).
    #[error("structural error: {0}")]
    Structure(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// Hard constraints contradict each other.
    #[error("infeasible constraints: {reason} (nodes {chain:?})")]
    Infeasible { reason: String, chain: Vec<NodeId> },

    #[error("instance has {nodes} nodes, exact solver limit is {limit}")]
    TooLarge { nodes: usize, limit: usize },

    #[error("feature schema mismatch: expected {expected}, got {got}")]
    Schema { expected: String, got: String },

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn structure(msg: impl Into<String>) -> Self {
        Error::Structure(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
