//! Model of a size-class under incremental compaction.
//!
//! Extends the basic state with the class's source page (`used` blocks that
//! are still regular objects, `inflight` blocks whose move is under way) and
//! the in-flight jobs, each with the number of bytes already moved. Jobs
//! whose source page has been drained of regular objects live in the global
//! emptying pool; the model only tracks how many pool pages came from this
//! class.
//!
//! Heap logs are grouped in atomic units. [`replay`] feeds them through the
//! model and compares the model state with the heap's snapshot after each
//! unit.

use std::fmt;

use super::{
    check, classify, step_alloc, step_compact, step_dealloc, AutomatonConfig, AutomatonState, PageSelector, StateClass,
};
use crate::config::Limit;
use crate::error::ContractError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SourceState {
    pub used: usize,
    pub inflight: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct JobState {
    pub id: u64,
    pub moved: usize,
    pub in_pool: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct IncrementalState {
    pub base: AutomatonState,
    pub source: Option<SourceState>,
    /// Ordered by job id.
    pub jobs: Vec<JobState>,
    pub pool_pages: usize,
}

impl IncrementalState {
    pub fn from_base(base: AutomatonState) -> Self {
        IncrementalState { base, ..Default::default() }
    }

    pub fn source_used(&self) -> usize {
        self.source.map_or(0, |s| s.used)
    }

    fn job_mut(&mut self, id: u64) -> Result<&mut JobState, ContractError> {
        self.jobs.iter_mut().find(|j| j.id == id).ok_or_else(|| ContractError(format!("no in-flight job {id}")))
    }

    fn take_job(&mut self, id: u64) -> Result<JobState, ContractError> {
        let pos =
            self.jobs.iter().position(|j| j.id == id).ok_or_else(|| ContractError(format!("no in-flight job {id}")))?;
        Ok(self.jobs.remove(pos))
    }
}

impl fmt::Display for IncrementalState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.base)?;
        if let Some(s) = self.source {
            write!(f, " src(used={}, inflight={})", s.used, s.inflight)?;
        }
        for j in &self.jobs {
            write!(f, " job{}:{}{}", j.id, j.moved, if j.in_pool { "E" } else { "" })?;
        }
        if self.pool_pages > 0 {
            write!(f, " pool={}", self.pool_pages)?;
        }
        Ok(())
    }
}

/// One transition recorded by the heap for a size-class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClassEvent {
    Alloc,
    Dealloc(PageSelector),
    /// Non-incremental single-object move.
    Compact,
    /// The head not-full page becomes the class's source page; nothing moves.
    Designate,
    /// A move starts from the source page into the freed block of the last
    /// not-full page. `conflict` names the job whose target was picked as
    /// the new source block and was therefore canceled.
    Begin {
        job: u64,
        conflict: Option<u64>,
        bytes: usize,
        pool_freed: bool,
    },
    Step {
        job: u64,
        bytes: usize,
        pool_freed: bool,
    },
    /// Deallocation of an object whose move is in flight. `target` is the
    /// page holding the partial copy.
    CancelDealloc {
        job: u64,
        target: PageSelector,
        pool_freed: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogEntry {
    pub events: Vec<ClassEvent>,
    pub after: IncrementalState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IncrementalAutomaton {
    pub pi: usize,
    pub kappa: Limit,
    pub beta: usize,
    /// `Unbounded` selects the non-incremental rules.
    pub iota: Limit,
}

fn err<T>(msg: impl Into<String>) -> Result<T, ContractError> {
    Err(ContractError(msg.into()))
}

impl IncrementalAutomaton {
    fn base_cfg(&self) -> AutomatonConfig {
        AutomatonConfig { pi: self.pi, kappa: self.kappa }
    }

    fn chunk(&self, moved: usize) -> usize {
        self.iota.min_with(self.beta - moved)
    }

    pub fn check(&self, s: &IncrementalState) -> Result<(), ContractError> {
        let pi = self.pi;
        let base = &s.base;
        if base.u.iter().any(|&v| v == 0 || v >= pi) {
            return err(format!("{s}: not-full page count out of range"));
        }
        let in_pages = base.used_in_not_full() + s.source_used();
        if in_pages > base.h || !(base.h - in_pages).is_multiple_of(pi) {
            return err(format!("{s}: h does not decompose into pages"));
        }
        if let Some(src) = s.source {
            if src.used == 0 || src.used >= pi {
                return err(format!("{s}: source page must hold 1..pi-1 regular objects"));
            }
            let here = s.jobs.iter().filter(|j| !j.in_pool).count();
            if src.inflight != here {
                return err(format!("{s}: source in-flight count disagrees with jobs"));
            }
        } else if s.jobs.iter().any(|j| !j.in_pool) {
            return err(format!("{s}: job outside the pool without a source page"));
        }
        let pool_jobs = s.jobs.iter().filter(|j| j.in_pool).count();
        if s.pool_pages > pool_jobs || (s.pool_pages == 0) != (pool_jobs == 0) {
            return err(format!("{s}: pool pages inconsistent with pool jobs"));
        }
        if s.jobs.iter().any(|j| j.moved == 0 || j.moved >= self.beta) {
            return err(format!("{s}: job progress out of range"));
        }
        if s.jobs.windows(2).any(|w| w[0].id >= w[1].id) {
            return err(format!("{s}: jobs not ordered by id"));
        }
        Ok(())
    }

    fn dealloc(&self, s: &mut IncrementalState, sel: PageSelector) -> Result<(), ContractError> {
        if s.base.h == 0 {
            return err("deallocation in an empty size-class");
        }
        match sel {
            PageSelector::NotFull(i) => {
                let Some(&ui) = s.base.u.get(i) else {
                    return err(format!("{s}: no not-full page at position {i}"));
                };
                if ui > 1 {
                    s.base.u[i] -= 1;
                } else {
                    s.base.u.remove(i);
                }
            }
            PageSelector::Full => {
                let full = s.base.h - s.base.used_in_not_full() - s.source_used();
                if full == 0 {
                    return err(format!("{s}: no full page to deallocate from"));
                }
                if self.pi > 1 {
                    s.base.u.push(self.pi - 1);
                }
            }
            PageSelector::Source => {
                let Some(src) = s.source.as_mut() else {
                    return err(format!("{s}: no source page"));
                };
                src.used -= 1;
                if src.used == 0 {
                    self.drain_source(s);
                }
            }
        }
        s.base.h -= 1;
        Ok(())
    }

    /// The source page lost its last regular object.
    fn drain_source(&self, s: &mut IncrementalState) {
        let src = s.source.take().expect("source page");
        if src.inflight > 0 {
            for j in s.jobs.iter_mut() {
                j.in_pool = true;
            }
            s.pool_pages += 1;
        }
    }

    fn require_compaction(&self, s: &IncrementalState) -> Result<(), ContractError> {
        if !self.kappa.exceeded_by(s.base.n()) {
            return err(format!("{s}: compaction step without excess not-full page"));
        }
        if s.base.u.last() != Some(&(self.pi - 1)) {
            return err(format!("{s}: last not-full page must have one free block"));
        }
        Ok(())
    }

    fn end_job(
        &self,
        s: &mut IncrementalState,
        job: JobState,
        pool_freed: bool,
        convert_now: bool,
    ) -> Result<bool, ContractError> {
        if job.in_pool {
            if pool_freed {
                if s.pool_pages == 0 {
                    return err(format!("{s}: pool page freed but pool is empty"));
                }
                s.pool_pages -= 1;
            }
            return Ok(false);
        }
        if pool_freed {
            return err(format!("{s}: pool page freed by a job outside the pool"));
        }
        let Some(src) = s.source.as_mut() else {
            return err(format!("{s}: job {} has no source page", job.id));
        };
        src.inflight -= 1;
        if src.inflight == 0 {
            if convert_now {
                self.convert_source(s);
                return Ok(false);
            }
            return Ok(true);
        }
        Ok(false)
    }

    /// A source page with no moves left becomes a not-full page again when
    /// there is room under the bound; otherwise it stays as potential source.
    fn convert_source(&self, s: &mut IncrementalState) {
        if let Some(src) = s.source {
            if src.inflight == 0 && !self.kappa.exceeded_by(s.base.n() + 1) {
                s.base.u.push(src.used);
                s.source = None;
            }
        }
    }

    fn advance(&self, s: &mut IncrementalState, id: u64, bytes: usize, pool_freed: bool) -> Result<(), ContractError> {
        let job = s.job_mut(id)?;
        let expect = self.chunk(job.moved);
        if bytes != expect {
            return err(format!("job {id}: step moved {bytes} bytes, expected {expect}"));
        }
        job.moved += bytes;
        if job.moved == self.beta {
            let job = s.take_job(id)?;
            self.end_job(s, job, pool_freed, true)?;
        } else if pool_freed {
            return err(format!("job {id}: pool page freed before the job finished"));
        }
        Ok(())
    }

    fn apply(
        &self,
        s: &mut IncrementalState,
        ev: &ClassEvent,
        pending_conversion: &mut bool,
    ) -> Result<(), ContractError> {
        match *ev {
            ClassEvent::Alloc => {
                if self.kappa.exceeded_by(s.base.n()) {
                    return err(format!("{s}: allocation before mandatory compaction"));
                }
                s.base.h += 1;
                match s.base.u.last_mut() {
                    None => {
                        if self.pi > 1 {
                            s.base.u.push(1);
                        }
                    }
                    Some(last) if *last + 1 < self.pi => *last += 1,
                    Some(_) => {
                        s.base.u.pop();
                    }
                }
            }
            ClassEvent::Dealloc(sel) => {
                if self.kappa.exceeded_by(s.base.n()) {
                    return err(format!("{s}: deallocation before mandatory compaction"));
                }
                self.dealloc(s, sel)?;
            }
            ClassEvent::Compact => return err("non-incremental compaction in incremental mode"),
            ClassEvent::Designate => {
                self.require_compaction(s)?;
                if s.source.is_some() {
                    return err(format!("{s}: designation while a source page exists"));
                }
                let used = s.base.u.remove(0);
                s.source = Some(SourceState { used, inflight: 0 });
            }
            ClassEvent::Begin { job, conflict, bytes, pool_freed } => {
                self.require_compaction(s)?;
                if s.source.is_none() {
                    return err(format!("{s}: move started without a source page"));
                }
                if s.jobs.iter().any(|j| j.id >= job) {
                    return err(format!("{s}: job id {job} is not fresh"));
                }
                let in_pool = match conflict {
                    Some(old) => s.take_job(old)?.in_pool,
                    None => false,
                };
                let src = s.source.as_mut().expect("source page");
                src.used -= 1;
                if !in_pool && conflict.is_none() {
                    src.inflight += 1;
                }
                s.base.u.pop();
                s.jobs.push(JobState { id: job, moved: 0, in_pool });
                if s.source_used() == 0 {
                    self.drain_source(s);
                }
                self.advance(s, job, bytes, pool_freed)?;
            }
            ClassEvent::Step { job, bytes, pool_freed } => {
                self.advance(s, job, bytes, pool_freed)?;
            }
            ClassEvent::CancelDealloc { job, target, pool_freed } => {
                if self.kappa.exceeded_by(s.base.n()) {
                    return err(format!("{s}: deallocation before mandatory compaction"));
                }
                let j = s.take_job(job)?;
                if self.end_job(s, j, pool_freed, false)? {
                    *pending_conversion = true;
                }
                self.dealloc(s, target)?;
            }
        }
        Ok(())
    }

    /// Applies one atomic unit and returns the successor state.
    pub fn apply_unit(
        &self,
        state: &IncrementalState,
        events: &[ClassEvent],
    ) -> Result<IncrementalState, ContractError> {
        if !self.iota.is_finite() {
            return self.apply_unit_basic(state, events);
        }
        let mut s = state.clone();
        let mut pending_conversion = false;
        for ev in events {
            self.apply(&mut s, ev, &mut pending_conversion)?;
        }
        if pending_conversion {
            self.convert_source(&mut s);
        }
        if self.kappa.exceeded_by(s.base.n()) {
            return err(format!("{s}: unit ended above the partial compaction bound"));
        }
        self.check(&s)?;
        Ok(s)
    }

    fn apply_unit_basic(
        &self,
        state: &IncrementalState,
        events: &[ClassEvent],
    ) -> Result<IncrementalState, ContractError> {
        if state.source.is_some() || !state.jobs.is_empty() || state.pool_pages != 0 {
            return err("non-incremental state with incremental components");
        }
        let cfg = self.base_cfg();
        let mut base = state.base.clone();
        for ev in events {
            base = match *ev {
                ClassEvent::Alloc => step_alloc(&base, &cfg)?,
                ClassEvent::Dealloc(sel) => step_dealloc(&base, &cfg, sel)?,
                ClassEvent::Compact => step_compact(&base, &cfg)?,
                ref other => return err(format!("{other:?} in non-incremental mode")),
            };
        }
        check(&base, &cfg)?;
        if classify(&base, &cfg)? == StateClass::Compaction {
            return err(format!("{base}: unit ended in a compaction state"));
        }
        Ok(IncrementalState::from_base(base))
    }
}

/// Replays a heap log through the model, comparing states after every unit.
/// Returns the number of units replayed.
pub fn replay(model: &IncrementalAutomaton, log: &[LogEntry]) -> Result<usize, ContractError> {
    replay_from(model, IncrementalState::default(), log).map(|_| log.len())
}

/// Like [`replay`], starting from `state`; returns the final state so a log
/// drained in pieces can be checked piece by piece.
pub fn replay_from(
    model: &IncrementalAutomaton,
    mut state: IncrementalState,
    log: &[LogEntry],
) -> Result<IncrementalState, ContractError> {
    for (i, entry) in log.iter().enumerate() {
        state = model
            .apply_unit(&state, &entry.events)
            .map_err(|e| ContractError(format!("unit {i} {:?}: {}", entry.events, e.0)))?;
        if state != entry.after {
            return err(format!("unit {i} {:?}: model reached {state}, heap reports {}", entry.events, entry.after));
        }
    }
    Ok(state)
}
