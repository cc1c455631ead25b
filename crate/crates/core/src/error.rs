use thiserror::Error;

/// Errors returned by heap operations.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HeapError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unsupported object size {size} (largest usable block is {max} bytes)")]
    UnsupportedSize { size: usize, max: usize },
    #[error("payload of {payload} bytes exceeds requested size {size}")]
    PayloadTooLarge { payload: usize, size: usize },
    #[error("out of memory: no free page and no not-full page in size-class {class}")]
    OutOfMemory { class: usize },
    #[error("out of handles: the abstract address table is exhausted")]
    OutOfHandles,
    #[error("stale or invalid handle {0:#x}")]
    InvalidHandle(u64),
    #[error("double free or stale handle {0:#x}")]
    DoubleFree(u64),
    #[error("access of {len} bytes at offset {offset} exceeds usable block size {usable}")]
    OutOfBounds { offset: usize, len: usize, usable: usize },
    #[error("a compaction triggered by this mutator is still in flight; drive it to completion first")]
    CompactionPending,
    #[error("too many mutators registered (limit {0})")]
    TooManyMutators(usize),
}

/// Violation of a transition precondition in the size-class automaton.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("automaton contract violation: {0}")]
pub struct ContractError(pub String);

pub type Result<T, E = HeapError> = std::result::Result<T, E>;
