//! Workload drivers behind the `cfit` tool: size distributions, trace
//! files, the batch microbenchmark, trace replay and CSV reporting.

pub mod dist;
pub mod report;
pub mod runner;
pub mod trace;

pub use dist::SizeDistribution;
pub use report::RunReport;
pub use runner::{replay, run_bench, BenchParams, ReplayError};
pub use trace::{generate, Dynamics, GenParams, Trace, TraceOp};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: {msg}")]
pub struct ParseError {
    pub line: usize,
    pub msg: String,
}
