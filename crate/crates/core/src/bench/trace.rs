//! Allocation traces.
//!
//! One operation per line: `a <id> <size>` allocates `size` bytes and binds
//! the object to `id`; `f <id>` frees it. `#` starts a comment and blank
//! lines are ignored.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dist::SizeDistribution;
use super::ParseError;

pub const TRACE_VERSION: &str = "# cfit-trace v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceOp {
    Alloc { id: u64, size: usize },
    Free { id: u64 },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trace {
    pub ops: Vec<TraceOp>,
}

impl Trace {
    /// Parses and validates: ids are unique among live objects and every
    /// free names a live id.
    pub fn parse(text: &str) -> Result<Trace, ParseError> {
        let mut ops = Vec::new();
        let mut live = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| ParseError { line: i + 1, msg };
            let f: Vec<&str> = line.split_whitespace().collect();
            let num = |s: &str| s.parse::<u64>().map_err(|_| err(format!("bad number {s:?}")));
            let op = match f.as_slice() {
                ["a", id, size] => TraceOp::Alloc { id: num(id)?, size: num(size)? as usize },
                ["f", id] => TraceOp::Free { id: num(id)? },
                _ => return Err(err(format!("expected `a <id> <size>` or `f <id>`, got {line:?}"))),
            };
            match op {
                TraceOp::Alloc { id, .. } if !live.insert(id) => {
                    return Err(err(format!("id {id} is already live")));
                }
                TraceOp::Free { id } if !live.remove(&id) => {
                    return Err(err(format!("free of unknown id {id}")));
                }
                _ => {}
            }
            ops.push(op);
        }
        Ok(Trace { ops })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.ops.len() * 12);
        out.push_str(TRACE_VERSION);
        out.push('\n');
        for op in &self.ops {
            match *op {
                TraceOp::Alloc { id, size } => writeln!(out, "a {id} {size}"),
                TraceOp::Free { id } => writeln!(out, "f {id}"),
            }
            .expect("writing to a string");
        }
        out
    }

    pub fn allocations(&self) -> impl Iterator<Item = usize> + '_ {
        self.ops.iter().filter_map(|op| match *op {
            TraceOp::Alloc { size, .. } => Some(size),
            TraceOp::Free { .. } => None,
        })
    }

    pub fn live_at_end(&self) -> usize {
        self.ops
            .iter()
            .map(|op| match op {
                TraceOp::Alloc { .. } => 1isize,
                TraceOp::Free { .. } => -1,
            })
            .sum::<isize>() as usize
    }
}

/// Shape of the live set over the trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dynamics {
    /// Live set grows linearly to the maximum.
    Ramp,
    /// Climbs to the maximum, then churns there.
    Steady,
    /// Four rise-and-collapse cycles.
    Sawtooth,
}

impl FromStr for Dynamics {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "ramp" => Ok(Dynamics::Ramp),
            "steady" => Ok(Dynamics::Steady),
            "sawtooth" => Ok(Dynamics::Sawtooth),
            _ => Err(format!("unknown dynamics {s:?} (ramp|steady|sawtooth)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GenParams {
    pub ops: usize,
    pub seed: u64,
    pub max_live: usize,
    pub dynamics: Dynamics,
}

impl GenParams {
    fn target(&self, i: usize) -> usize {
        let t = i as f64 / self.ops.max(1) as f64;
        let frac = match self.dynamics {
            Dynamics::Ramp => t,
            Dynamics::Steady => 1.0,
            Dynamics::Sawtooth => (4.0 * t).fract(),
        };
        ((frac * self.max_live as f64).round() as usize).max(1)
    }
}

/// A reproducible trace of `params.ops` operations.
pub fn generate(dist: &SizeDistribution, params: &GenParams) -> Trace {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut live: Vec<u64> = Vec::new();
    let mut next_id = 0u64;
    let mut ops = Vec::with_capacity(params.ops);
    for i in 0..params.ops {
        let below = live.len() < params.target(i);
        let alloc = live.is_empty() || rng.gen_bool(if below { 0.75 } else { 0.25 });
        if alloc {
            ops.push(TraceOp::Alloc { id: next_id, size: dist.sample(&mut rng) });
            live.push(next_id);
            next_id += 1;
        } else {
            let id = live.swap_remove(rng.gen_range(0..live.len()));
            ops.push(TraceOp::Free { id });
        }
    }
    Trace { ops }
}
