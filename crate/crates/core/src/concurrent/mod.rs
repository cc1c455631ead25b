//! Lock-free free lists and multi-threaded deployment helpers.
//!
//! Every size-class transition runs under that class's lock; with
//! [`LockRegime::Page`](crate::LockRegime::Page) the class lock is dropped
//! while bytes are copied and only the two pages involved stay locked.

pub mod freelist;

use std::fmt;
use std::str::FromStr;

use crate::config::{ClassScope, HeapConfig};
use crate::error::{HeapError, Result};
use crate::heap::{Mutator, SharedHeap};

/// How threads share memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DeploymentMode {
    /// One heap, size classes shared by all threads.
    SharedGlobal,
    /// One heap, private size classes per thread. Objects may still be
    /// freed by any thread.
    ThreadLocal,
    /// One independent heap per thread.
    Instances,
}

impl FromStr for DeploymentMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "global" | "shared" => Ok(DeploymentMode::SharedGlobal),
            "local" | "thread-local" => Ok(DeploymentMode::ThreadLocal),
            "instances" => Ok(DeploymentMode::Instances),
            _ => Err(format!("unknown mode {s:?} (global|local|instances)")),
        }
    }
}

impl fmt::Display for DeploymentMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DeploymentMode::SharedGlobal => "global",
            DeploymentMode::ThreadLocal => "local",
            DeploymentMode::Instances => "instances",
        })
    }
}

/// Heaps for `threads` workers under one deployment mode.
#[derive(Clone)]
pub struct Deployment {
    mode: DeploymentMode,
    heaps: Vec<SharedHeap>,
}

impl Deployment {
    /// In instance mode the arena is split evenly between the heaps.
    pub fn new(mode: DeploymentMode, cfg: HeapConfig, threads: usize) -> Result<Deployment> {
        if threads == 0 {
            return Err(HeapError::Config("at least one thread is required".into()));
        }
        let heaps = match mode {
            DeploymentMode::SharedGlobal => {
                vec![SharedHeap::new(cfg.class_scope(ClassScope::Global).max_mutators(threads.max(1)))?]
            }
            DeploymentMode::ThreadLocal => {
                vec![SharedHeap::new(cfg.class_scope(ClassScope::ThreadLocal).max_mutators(threads))?]
            }
            DeploymentMode::Instances => {
                let share = cfg.arena_bytes / threads / cfg.page_bytes * cfg.page_bytes;
                let mut each = cfg.class_scope(ClassScope::Global).max_mutators(1);
                each.arena_bytes = share;
                (0..threads).map(|_| SharedHeap::new(each.clone())).collect::<Result<_>>()?
            }
        };
        Ok(Deployment { mode, heaps })
    }

    pub fn mode(&self) -> DeploymentMode {
        self.mode
    }

    pub fn heaps(&self) -> &[SharedHeap] {
        &self.heaps
    }

    pub fn heap_for(&self, thread: usize) -> &SharedHeap {
        match self.mode {
            DeploymentMode::Instances => &self.heaps[thread],
            _ => &self.heaps[0],
        }
    }

    /// Registers the mutator of worker `thread`.
    pub fn mutator(&self, thread: usize) -> Result<Mutator> {
        self.heap_for(thread).mutator()
    }

    /// Whether an object allocated by one worker may be freed by another.
    pub fn allows_sharing(&self) -> bool {
        self.mode != DeploymentMode::Instances
    }
}
