use std::path::PathBuf;

use thiserror::Error;

use crate::graph::EntityId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("action index {index} out of range (graph has {len} actions)")]
    ActionOutOfRange { index: usize, len: usize },

    #[error("entity {0} does not exist")]
    UnknownEntity(EntityId),

    #[error("stale move: entity {entity} has origin {found}, move expected {expected}")]
    StaleMove { entity: EntityId, expected: usize, found: usize },

    #[error("illegal move: entity {entity} cannot reference action {origin}")]
    IllegalMove { entity: EntityId, origin: usize },

    #[error("graph has {graph} actions but transcript has {transcript}")]
    ActionCountMismatch { graph: usize, transcript: usize },

    #[error("graph is not temporally grounded")]
    Ungrounded,

    #[error("span {span:?} of action {action} exceeds {frames} frames")]
    SpanOutOfBounds { action: usize, span: (usize, usize), frames: usize },

    #[error("cannot place {actions} actions in {frames} frames")]
    TooFewFrames { actions: usize, frames: usize },

    #[error("empty transcript")]
    EmptyTranscript,

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("no frame falls inside an action span")]
    NoPositivePairs,

    #[error("skeleton mismatch: {0}")]
    SkeletonMismatch(String),

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed frames file: {0}")]
    FrameFormat(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error(transparent)]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
