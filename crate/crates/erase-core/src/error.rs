//! One error type for the whole crate. Variants carry enough context to
//! pinpoint the offending record (id, line, index) without a backtrace.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("duplicate example id {0}")]
    DuplicateId(u64),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("no embedding for example id {0}")]
    MissingEmbedding(u64),

    #[error("embedding for id {id} has dimension {got}, expected {expected}")]
    DimMismatch { id: u64, got: usize, expected: usize },

    #[error("embedding for id {0} contains a non-finite component")]
    NonFiniteVector(u64),

    #[error("embedding file refers to id {0} which is not in the dataset")]
    UnknownEmbeddingId(u64),

    #[error("non-finite input to quantize")]
    NonFiniteInput,

    #[error("need at least {needed} examples, corpus has {got}")]
    TooFewExamples { needed: usize, got: usize },

    #[error("invalid cluster count k={0}")]
    InvalidK(usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unknown or dead example id {0}")]
    UnknownId(u64),

    #[error("cannot replace deleted exemplar {victim}: no live candidates remain")]
    CannotReplace { victim: u64 },

    #[error("deletion request {index} targets dead or unknown id {id}")]
    DeadVictim { id: u64, index: usize },

    #[error("stream requests {requested} deletions but corpus has {live} live examples")]
    StreamTooLong { requested: usize, live: usize },

    #[error("invalid shard count {0}")]
    InvalidShards(u32),

    #[error("break-even undefined: methods have equal inference cost")]
    UndefinedBreakEven,

    #[error("degenerate score range: low == high")]
    DegenerateRange,

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("snapshot format error: {0}")]
    Snapshot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
