use std::path::PathBuf;

use crate::graph::RelationId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: unknown label {label:?}")]
    UnknownLabel { line: usize, label: String },
    #[error("unknown relation id {0}")]
    UnknownRelation(RelationId),
    #[error("unknown relation label {0:?}")]
    UnknownRelationLabel(String),
    #[error("{kind} id {id} out of range (size {size})")]
    IdOutOfRange { kind: &'static str, id: usize, size: usize },
    #[error("invalid configuration: {field}: {message}")]
    Config { field: String, message: String },
    #[error("model archive: format version {found} not supported (expected {expected})")]
    ArchiveVersion { found: u32, expected: u32 },
    #[error("model archive: shape mismatch: {0}")]
    ArchiveShape(String),
    #[error("model archive: truncated parameter block {block:?}")]
    ArchiveTruncated { block: String },
    #[error("model archive: {0}")]
    ArchiveHeader(String),
    #[error("frequent itemset table is not downward closed: missing {0:?}")]
    MissingSubset(Vec<NodeIdRaw>),
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("{0}")]
    Invalid(String),
}

/// Raw node id inside error payloads.
pub type NodeIdRaw = u32;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn config(field: &str, message: impl Into<String>) -> Self {
        Error::Config { field: field.to_string(), message: message.into() }
    }
}
