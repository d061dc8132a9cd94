use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = EgatError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum EgatError {
    #[error("node index {index} out of range for a graph with {num_nodes} nodes")]
    NodeOutOfRange { index: usize, num_nodes: usize },

    #[error("duplicate undirected edge {{{0}, {1}}}")]
    DuplicateEdge(usize, usize),

    #[error("row count mismatch: expected {expected}, found {found}")]
    RowMismatch { expected: usize, found: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("node {0} has no self-loop; add virtual self-loops before building structures")]
    MissingSelfLoop(usize),

    #[error("segment {0} is empty")]
    EmptySegment(usize),

    #[error("no feature mapped to adjacent slot ({row}, {col})")]
    MissingSlotFeature { row: usize, col: usize },

    #[error("backward requires a scalar loss, got shape {rows}x{cols}")]
    NonScalarBackward { rows: usize, cols: usize },

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("function evaluated twice at the same point gave {first} and {second}")]
    NonDeterministic { first: f64, second: f64 },

    #[error("mask selects no nodes")]
    EmptyMask,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("need at least {needed} labeled nodes to split, found {found}")]
    TooFewLabeled { needed: usize, found: usize },

    #[error("infeasible generator parameters: {0}")]
    Infeasible(String),

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("{file}:{line}: malformed row: {message}")]
    MalformedRow {
        file: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{file}:{line}: node id {id} is not defined in nodes.csv")]
    DanglingNode { file: PathBuf, line: usize, id: usize },

    #[error("{file}:{line}: duplicate edge {{{src}, {dst}}}")]
    DuplicateEdgeRow {
        file: PathBuf,
        line: usize,
        src: usize,
        dst: usize,
    },

    #[error("node {id} appears in both the {first} and {second} splits")]
    OverlappingMasks {
        id: usize,
        first: &'static str,
        second: &'static str,
    },

    #[error("split references node {id} which is unlabeled or unknown")]
    UnlabeledSplitNode { id: usize },

    #[error("label {label} of node {id} is not below num_classes = {num_classes}")]
    LabelOutOfRange {
        id: usize,
        label: usize,
        num_classes: usize,
    },

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

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
}

impl EgatError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        EgatError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        EgatError::Json {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        EgatError::DimensionMismatch(msg.into())
    }
}
