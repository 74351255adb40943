use thiserror::Error;

/// Which argument of a binary operation was degenerate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Operand {
    First,
    Second,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("{0:?} operand has zero norm")]
    ZeroNorm(Operand),

    #[error("non-finite value at index {0}")]
    NonFinite(usize),

    #[error("at least {needed} samples required, got {actual}")]
    TooFewSamples { needed: usize, actual: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("threshold window not ready: {len} value(s), need at least 2")]
    WindowNotReady { len: usize },

    #[error("chain linkage broken at block {block_number}")]
    Linkage { block_number: u64 },

    #[error("signature verification failed for author {author} at block {block_number}")]
    Auth { author: u32, block_number: u64 },

    #[error("round {round} already has an aggregate block")]
    AggregateConflict { round: u64 },

    #[error("malformed block: {0}")]
    MalformedBlock(String),

    #[error("no client updates on chain for round {0}")]
    NoUpdates(u64),

    #[error("no eligible miner at round {round}: every candidate is banned or already rejected")]
    MinersExhausted { round: u64 },

    #[error("infeasible data layout: {0}")]
    InfeasibleData(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("decode error: {0}")]
    Decode(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
