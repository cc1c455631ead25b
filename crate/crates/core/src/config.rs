//! Heap configuration.

use std::fmt;
use std::str::FromStr;

use crate::error::HeapError;

/// A positive bound that may also be switched off entirely.
///
/// Used for the partial compaction bound (not-full pages per size-class)
/// and for the compaction increment (bytes per atomic copy step).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Limit {
    Finite(usize),
    Unbounded,
}

impl Limit {
    pub fn is_finite(self) -> bool {
        matches!(self, Limit::Finite(_))
    }

    /// True if `value` is strictly above the bound.
    pub fn exceeded_by(self, value: usize) -> bool {
        match self {
            Limit::Finite(k) => value > k,
            Limit::Unbounded => false,
        }
    }

    pub fn finite(self) -> Option<usize> {
        match self {
            Limit::Finite(k) => Some(k),
            Limit::Unbounded => None,
        }
    }

    /// `min(self, other)` with `Unbounded` acting as infinity.
    pub fn min_with(self, other: usize) -> usize {
        match self {
            Limit::Finite(k) => k.min(other),
            Limit::Unbounded => other,
        }
    }
}

impl fmt::Display for Limit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Limit::Finite(k) => write!(f, "{k}"),
            Limit::Unbounded => f.write_str("inf"),
        }
    }
}

impl FromStr for Limit {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "inf" | "infinity" | "unbounded" => Ok(Limit::Unbounded),
            other => match other.parse::<usize>() {
                Ok(0) => Err("bound must be positive".into()),
                Ok(k) => Ok(Limit::Finite(k)),
                Err(e) => Err(format!("expected a positive integer or `inf`: {e}")),
            },
        }
    }
}

/// How objects are addressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Addressing {
    /// Handles index the abstract-to-concrete table; objects carry a
    /// backlink word so they can be moved.
    Abstract,
    /// Handles are concrete block locations. Objects never move, so the
    /// partial compaction bound must be unbounded.
    Direct,
}

/// Mutual-exclusion granularity inside a size-class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LockRegime {
    /// The whole transition, including any copy, runs under the class lock.
    SizeClass,
    /// The class lock is released before copying; only the source and
    /// target pages stay locked while bytes move.
    Page,
}

impl FromStr for LockRegime {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "class" | "size-class" | "sizeclass" => Ok(LockRegime::SizeClass),
            "page" => Ok(LockRegime::Page),
            _ => Err(format!("unknown lock regime {s:?} (sizeclass|page)")),
        }
    }
}

impl fmt::Display for LockRegime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LockRegime::SizeClass => "sizeclass",
            LockRegime::Page => "page",
        })
    }
}

/// Whether size-classes are shared by all mutators or private per mutator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassScope {
    Global,
    /// Each mutator allocates in its own size-classes; frees are routed to
    /// the class owning the object's page.
    ThreadLocal,
}

/// Smallest page-block size used by the default class ladder.
pub const DEFAULT_MIN_BLOCK: usize = 16;
/// Default page size.
pub const DEFAULT_PAGE_BYTES: usize = 16 * 1024;
/// Default private free-list length before it is published.
pub const DEFAULT_SPILL_BOUND: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeapConfig {
    pub arena_bytes: usize,
    pub page_bytes: usize,
    /// Ascending page-block sizes. Empty means the default ladder.
    pub class_block_sizes: Vec<usize>,
    /// Partial compaction bound applied to every class without an override.
    pub kappa: Limit,
    /// Per-class overrides, indexed like `class_block_sizes`.
    pub kappa_per_class: Vec<Option<Limit>>,
    /// Compaction increment in bytes; `Unbounded` disables incremental compaction.
    pub iota: Limit,
    pub addressing: Addressing,
    pub lock_regime: LockRegime,
    pub class_scope: ClassScope,
    /// Upper bound on concurrently registered mutators.
    pub max_mutators: usize,
    pub spill_bound: usize,
    /// Record per-class transition logs for oracle replay.
    pub record_logs: bool,
}

impl HeapConfig {
    pub fn new(arena_bytes: usize) -> Self {
        HeapConfig {
            arena_bytes,
            page_bytes: DEFAULT_PAGE_BYTES,
            class_block_sizes: Vec::new(),
            kappa: Limit::Finite(1),
            kappa_per_class: Vec::new(),
            iota: Limit::Unbounded,
            addressing: Addressing::Abstract,
            lock_regime: LockRegime::SizeClass,
            class_scope: ClassScope::Global,
            max_mutators: 64,
            spill_bound: DEFAULT_SPILL_BOUND,
            record_logs: false,
        }
    }

    pub fn page_bytes(mut self, page_bytes: usize) -> Self {
        self.page_bytes = page_bytes;
        self
    }

    pub fn classes(mut self, sizes: impl Into<Vec<usize>>) -> Self {
        self.class_block_sizes = sizes.into();
        self
    }

    pub fn kappa(mut self, kappa: Limit) -> Self {
        self.kappa = kappa;
        self
    }

    pub fn kappa_for_class(mut self, class: usize, kappa: Limit) -> Self {
        if self.kappa_per_class.len() <= class {
            self.kappa_per_class.resize(class + 1, None);
        }
        self.kappa_per_class[class] = Some(kappa);
        self
    }

    pub fn iota(mut self, iota: Limit) -> Self {
        self.iota = iota;
        self
    }

    pub fn addressing(mut self, addressing: Addressing) -> Self {
        self.addressing = addressing;
        self
    }

    /// Optimized non-compacting mode: direct addressing, no compaction.
    pub fn direct(mut self) -> Self {
        self.addressing = Addressing::Direct;
        self.kappa = Limit::Unbounded;
        self.kappa_per_class.clear();
        self
    }

    pub fn lock_regime(mut self, regime: LockRegime) -> Self {
        self.lock_regime = regime;
        self
    }

    pub fn class_scope(mut self, scope: ClassScope) -> Self {
        self.class_scope = scope;
        self
    }

    pub fn max_mutators(mut self, n: usize) -> Self {
        self.max_mutators = n;
        self
    }

    pub fn spill_bound(mut self, n: usize) -> Self {
        self.spill_bound = n;
        self
    }

    pub fn record_logs(mut self, on: bool) -> Self {
        self.record_logs = on;
        self
    }

    pub(crate) fn kappa_of(&self, class: usize) -> Limit {
        self.kappa_per_class.get(class).copied().flatten().unwrap_or(self.kappa)
    }

    pub(crate) fn check_modes(&self) -> Result<(), HeapError> {
        if self.addressing == Addressing::Direct {
            let classes = self.kappa_per_class.len().max(1);
            if (0..classes).any(|c| self.kappa_of(c).is_finite()) {
                return Err(HeapError::Config("direct addressing cannot move objects; kappa must be unbounded".into()));
            }
            if self.iota.is_finite() {
                return Err(HeapError::Config("direct addressing cannot move objects; iota must be unbounded".into()));
            }
        }
        if self.max_mutators == 0 {
            return Err(HeapError::Config("max_mutators must be positive".into()));
        }
        if self.spill_bound == 0 {
            return Err(HeapError::Config("spill_bound must be positive".into()));
        }
        if matches!(self.iota, Limit::Finite(0)) || matches!(self.kappa, Limit::Finite(0)) {
            return Err(HeapError::Config("kappa and iota must be positive".into()));
        }
        Ok(())
    }
}
