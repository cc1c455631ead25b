pub mod automaton;
pub mod bench;
pub mod concurrent;
pub mod config;
pub mod error;
pub mod heap;
pub mod markov;

pub use config::{Addressing, ClassScope, HeapConfig, Limit, LockRegime};
pub use error::{ContractError, HeapError, Result};
pub use heap::{FreeOutcome, Handle, Heap, HeapStats, Mutator, SharedHeap, StepOutcome};
