//! Executable model of a single size-class.
//!
//! A size-class is described by the number `h` of allocated page-blocks and
//! the ordered used-block counts `u` of its not-full pages. Full pages are
//! implicit: they hold `h - sum(u)` blocks. The model never touches memory;
//! the heap projects its real bookkeeping onto [`AutomatonState`] and the
//! tests compare both after every operation.
//!
//! The complete transition table is listed in `docs/automaton-rules.md`.

mod incremental;

pub use incremental::{
    replay, replay_from, ClassEvent, IncrementalAutomaton, IncrementalState, JobState, LogEntry, SourceState,
};

use std::fmt;

use crate::config::Limit;
use crate::error::ContractError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AutomatonConfig {
    pub pi: usize,
    pub kappa: Limit,
}

impl AutomatonConfig {
    pub fn new(pi: usize, kappa: Limit) -> Result<Self, ContractError> {
        if pi == 0 {
            return Err(ContractError("pi must be at least 1".into()));
        }
        if kappa == Limit::Finite(0) {
            return Err(ContractError("kappa must be at least 1".into()));
        }
        Ok(AutomatonConfig { pi, kappa })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct AutomatonState {
    pub h: usize,
    pub u: Vec<usize>,
}

impl AutomatonState {
    pub fn empty() -> Self {
        AutomatonState::default()
    }

    pub fn new(h: usize, u: impl Into<Vec<usize>>) -> Self {
        AutomatonState { h, u: u.into() }
    }

    /// State reached after `h` allocations into an empty class.
    pub fn after_allocations(h: usize, pi: usize) -> Self {
        let rem = h % pi;
        if rem == 0 {
            AutomatonState::new(h, [])
        } else {
            AutomatonState::new(h, [rem])
        }
    }

    pub fn n(&self) -> usize {
        self.u.len()
    }

    pub fn used_in_not_full(&self) -> usize {
        self.u.iter().sum()
    }

    /// Blocks held by full pages.
    pub fn in_full_pages(&self) -> usize {
        self.h - self.used_in_not_full()
    }

    pub fn full_pages(&self, pi: usize) -> usize {
        self.in_full_pages() / pi
    }

    /// Free page-blocks in not-full pages: `n * pi - sum(u)`.
    pub fn fragmentation(&self, pi: usize) -> usize {
        self.n() * pi - self.used_in_not_full()
    }

    /// Same state with `u` in ascending order.
    pub fn sorted(&self) -> Self {
        let mut u = self.u.clone();
        u.sort_unstable();
        AutomatonState { h: self.h, u }
    }
}

impl fmt::Display for AutomatonState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<{}, [", self.h)?;
        for (i, v) in self.u.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{v}")?;
        }
        f.write_str("]>")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StateClass {
    Empty,
    NotFull,
    Full,
    Compaction,
}

/// Which page a deallocation hits.
///
/// Not-full pages are addressed by their 0-based position in `u`. Full
/// pages are interchangeable and share one token. `Source` only exists in
/// the incremental model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PageSelector {
    NotFull(usize),
    Full,
    Source,
}

fn violation(msg: impl Into<String>) -> ContractError {
    ContractError(msg.into())
}

/// Checks the state invariants under `cfg`.
pub fn check(state: &AutomatonState, cfg: &AutomatonConfig) -> Result<(), ContractError> {
    let pi = cfg.pi;
    if let Some(bad) = state.u.iter().find(|&&v| v == 0 || v >= pi) {
        return Err(violation(format!("{state}: not-full page with {bad} used blocks (pi = {pi})")));
    }
    let sum = state.used_in_not_full();
    if sum > state.h {
        return Err(violation(format!("{state}: sum(u) exceeds h")));
    }
    if !(state.h - sum).is_multiple_of(pi) {
        return Err(violation(format!("{state}: blocks outside not-full pages do not fill whole pages")));
    }
    if let Limit::Finite(k) = cfg.kappa {
        if state.n() > k + 1 {
            return Err(violation(format!("{state}: more than kappa+1 not-full pages")));
        }
    }
    Ok(())
}

pub fn classify(state: &AutomatonState, cfg: &AutomatonConfig) -> Result<StateClass, ContractError> {
    check(state, cfg)?;
    Ok(if state.h == 0 {
        StateClass::Empty
    } else if cfg.kappa.exceeded_by(state.n()) {
        StateClass::Compaction
    } else if state.n() == 0 {
        StateClass::Full
    } else {
        StateClass::NotFull
    })
}

pub fn step_alloc(state: &AutomatonState, cfg: &AutomatonConfig) -> Result<AutomatonState, ContractError> {
    if classify(state, cfg)? == StateClass::Compaction {
        return Err(violation(format!("{state}: allocation before mandatory compaction")));
    }
    let mut next = state.clone();
    next.h += 1;
    match next.u.last_mut() {
        None => {
            if cfg.pi > 1 {
                next.u.push(1);
            }
        }
        Some(last) if *last + 1 < cfg.pi => *last += 1,
        Some(_) => {
            next.u.pop();
        }
    }
    Ok(next)
}

pub fn step_dealloc(
    state: &AutomatonState,
    cfg: &AutomatonConfig,
    page: PageSelector,
) -> Result<AutomatonState, ContractError> {
    if classify(state, cfg)? == StateClass::Compaction {
        return Err(violation(format!("{state}: deallocation before mandatory compaction")));
    }
    if state.h == 0 {
        return Err(violation("deallocation in an empty size-class"));
    }
    let mut next = state.clone();
    next.h -= 1;
    match page {
        PageSelector::NotFull(i) => {
            let Some(&ui) = state.u.get(i) else {
                return Err(violation(format!("{state}: no not-full page at position {i}")));
            };
            if ui > 1 {
                next.u[i] -= 1;
            } else {
                next.u.remove(i);
            }
        }
        PageSelector::Full => {
            if state.in_full_pages() == 0 {
                return Err(violation(format!("{state}: no full page to deallocate from")));
            }
            if cfg.pi > 1 {
                next.u.push(cfg.pi - 1);
            }
        }
        PageSelector::Source => {
            return Err(violation("the non-incremental model has no source page"));
        }
    }
    Ok(next)
}

pub fn step_compact(state: &AutomatonState, cfg: &AutomatonConfig) -> Result<AutomatonState, ContractError> {
    if classify(state, cfg)? != StateClass::Compaction {
        return Err(violation(format!("{state}: compaction outside a compaction state")));
    }
    if state.u.last() != Some(&(cfg.pi - 1)) {
        return Err(violation(format!("{state}: last not-full page must have exactly one free block")));
    }
    let mut next = state.clone();
    next.u.pop();
    if next.u[0] > 1 {
        next.u[0] -= 1;
    } else {
        next.u.remove(0);
    }
    Ok(next)
}

/// Every page a deallocation may legally hit in `state`.
pub fn dealloc_choices(state: &AutomatonState) -> Vec<PageSelector> {
    let mut out: Vec<PageSelector> = (0..state.n()).map(PageSelector::NotFull).collect();
    if state.in_full_pages() > 0 {
        out.push(PageSelector::Full);
    }
    out
}
