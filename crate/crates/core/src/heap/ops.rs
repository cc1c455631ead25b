//! Size-class transitions.
//!
//! A [`Unit`] is one atomic unit executed under a class lock: allocation,
//! deallocation (plus the compaction step it triggers), or a single
//! incremental step. Page payload is touched only through a [`CopyPlan`]
//! that runs under the source and target page locks, which the unit takes
//! before any bookkeeping that could hand either page to another thread.

use std::sync::atomic::Ordering;

use parking_lot::MutexGuard;

use super::arena::{PageState, FLAG_TRANSIENT};
use super::class::{ClassState, Job};
use super::{HeapCore, CANCEL_BIT};
use crate::automaton::{ClassEvent, LogEntry, PageSelector};
use crate::concurrent::freelist::{PrivateList, NIL};
use crate::config::Limit;
use crate::error::HeapError;

pub(crate) type PairGuard<'a> = (MutexGuard<'a, ()>, MutexGuard<'a, ()>);

/// Bytes to move between two blocks once the page locks are held.
#[derive(Debug, Clone, Copy)]
pub(crate) struct CopyPlan {
    pub from: usize,
    pub to: usize,
    pub len: usize,
    /// Forwarding word to install after the copy.
    pub flip: Option<(u32, u64)>,
}

/// What happened to the handle passed to a deallocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum HandleFate {
    Released,
    /// Kept as the trigger of the returned in-flight job.
    Trigger(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum StepResult {
    Progress,
    Completed,
}

pub(crate) struct Unit<'c, 'g> {
    core: &'c HeapCore,
    cls: &'g mut ClassState,
    slot: u32,
    pages: &'g mut PrivateList,
    logging: bool,
    events: Vec<ClassEvent>,
    pair: Option<PairGuard<'c>>,
    plan: Option<CopyPlan>,
    pending_conversion: bool,
}

impl<'c, 'g> Unit<'c, 'g> {
    pub fn new(core: &'c HeapCore, cls: &'g mut ClassState, slot: usize, pages: &'g mut PrivateList) -> Self {
        let logging = cls.log.is_some();
        Unit {
            core,
            cls,
            slot: slot as u32,
            pages,
            logging,
            events: Vec::new(),
            pair: None,
            plan: None,
            pending_conversion: false,
        }
    }

    fn push(&mut self, ev: ClassEvent) {
        if self.logging {
            self.events.push(ev);
        }
    }

    fn selector(&self, page: u32) -> PageSelector {
        let arena = &self.core.arena;
        match arena.header(page).state() {
            PageState::NotFull if self.logging => PageSelector::NotFull(self.cls.notfull.position(arena, page)),
            PageState::NotFull => PageSelector::NotFull(0),
            PageState::Full => PageSelector::Full,
            PageState::Source => PageSelector::Source,
            s => unreachable!("deallocation in a {s:?} page"),
        }
    }

    fn lock_pair(&mut self, a: u32, b: u32) {
        self.pair = None;
        self.pair = Some(self.core.lock_pair(a, b));
    }

    fn offset(&self, page: u32, block: u32) -> usize {
        self.core.arena.block_offset(page, block, self.cls.beta)
    }

    fn refresh_transient(&self, page: u32) {
        let h = self.core.arena.header(page);
        let want = match h.state() {
            PageState::Emptying => true,
            PageState::Source => h.inflight() > 0,
            _ => false,
        };
        let have = h.flags.load(Ordering::Relaxed) & FLAG_TRANSIENT != 0;
        let stats = &self.core.stats;
        if want && !have {
            h.flags.fetch_or(FLAG_TRANSIENT, Ordering::Relaxed);
            let now = stats.transient_pages.fetch_add(1, Ordering::AcqRel) + 1;
            stats.peak_transient_pages.fetch_max(now, Ordering::AcqRel);
        } else if !want && have {
            h.flags.fetch_and(!FLAG_TRANSIENT, Ordering::Relaxed);
            stats.transient_pages.fetch_sub(1, Ordering::AcqRel);
        }
    }

    fn take_page(&mut self) -> Option<u32> {
        let page = self.pages.pop(&self.core.page_links(), &self.core.free_pages)?;
        let h = self.core.arena.header(page);
        debug_assert_eq!(h.state(), PageState::Free);
        debug_assert_eq!(self.core.arena.popcount(page), 0);
        h.owner.store(self.slot, Ordering::Release);
        h.used.store(0, Ordering::Relaxed);
        h.inflight.store(0, Ordering::Relaxed);
        h.set_state(PageState::NotFull);
        let now = self.core.stats.pages_in_use.fetch_add(1, Ordering::Relaxed) + 1;
        self.core.stats.peak_pages_in_use.fetch_max(now, Ordering::Relaxed);
        Some(page)
    }

    fn release_page(&mut self, page: u32) {
        let h = self.core.arena.header(page);
        debug_assert_eq!(self.core.arena.popcount(page), 0);
        h.used.store(0, Ordering::Relaxed);
        h.inflight.store(0, Ordering::Relaxed);
        h.set_state(PageState::Free);
        self.refresh_transient(page);
        h.owner.store(NIL, Ordering::Release);
        self.core.stats.pages_in_use.fetch_sub(1, Ordering::Relaxed);
        let spill = self.core.cfg.spill_bound;
        self.pages.push(&self.core.page_links(), &self.core.free_pages, spill, page);
    }

    fn make_full(&mut self, page: u32) {
        let arena = &self.core.arena;
        self.cls.notfull.remove(arena, page);
        self.cls.full.push_back(arena, page);
        arena.header(page).set_state(PageState::Full);
    }

    fn gid(&self, page: u32, block: u32) -> usize {
        page as usize * self.core.geo.slots_per_page + block as usize
    }

    fn role(&self, page: u32, block: u32) -> u64 {
        self.core.roles.get(self.gid(page, block)).map_or(0, |r| r.load(Ordering::Acquire))
    }

    fn set_roles(&self, job: &Job) {
        let s = self.gid(job.src_page, job.src_block);
        let t = self.gid(job.tgt_page, job.tgt_block);
        self.core.roles[s].store(((t as u64 + 1) << 1) | super::ROLE_SOURCE, Ordering::Release);
        self.core.roles[t].store(((s as u64 + 1) << 1) | super::ROLE_TARGET, Ordering::Release);
    }

    fn clear_role(&self, page: u32, block: u32) {
        self.core.roles[self.gid(page, block)].store(0, Ordering::Release);
    }

    fn job_with_src(&self, page: u32, block: u32) -> Option<usize> {
        self.cls.jobs.iter().position(|j| j.src_page == page && j.src_block == block)
    }

    fn job_with_tgt(&self, page: u32, block: u32) -> Option<usize> {
        self.cls.jobs.iter().position(|j| j.tgt_page == page && j.tgt_block == block)
    }

    pub fn alloc(&mut self) -> Result<(u32, u32), HeapError> {
        let arena = &self.core.arena;
        let page = if self.cls.notfull.tail != NIL {
            self.cls.notfull.tail
        } else {
            let p = self.take_page().ok_or(HeapError::OutOfMemory { class: self.cls.class })?;
            self.cls.notfull.push_back(&self.core.arena, p);
            p
        };
        let h = arena.header(page);
        debug_assert_eq!(h.state(), PageState::NotFull);
        let block = arena.first_free(page, self.cls.pi).expect("not-full page has a free block");
        arena.set_bit(page, block);
        let used = h.used.fetch_add(1, Ordering::Relaxed) as usize + 1;
        if used == self.cls.pi {
            self.make_full(page);
        }
        self.cls.h += 1;
        self.cls.counters.allocs += 1;
        self.push(ClassEvent::Alloc);
        Ok((page, block))
    }

    /// Deallocates the object in `(page, block)`. `handle` is the abstract
    /// address being freed, or `None` in direct mode.
    pub fn dealloc(&mut self, page: u32, block: u32, handle: Option<u32>) -> HandleFate {
        self.cls.counters.frees += 1;
        if self.role(page, block) & 1 == super::ROLE_SOURCE && self.role(page, block) != 0 {
            let idx = self.job_with_src(page, block).expect("source block has a job");
            return self.cancel_dealloc(idx, handle.expect("moves need handles"));
        }
        let sel = self.selector(page);
        self.push(ClassEvent::Dealloc(sel));
        self.free_block(page, block, handle)
    }

    /// Clears a regular used block and applies the page rules, starting the
    /// compaction the bound requires.
    fn free_block(&mut self, page: u32, block: u32, handle: Option<u32>) -> HandleFate {
        let arena = &self.core.arena;
        let h = arena.header(page);
        arena.clear_bit(page, block);
        let used = h.used.fetch_sub(1, Ordering::Relaxed) as usize - 1;
        self.cls.h -= 1;
        match h.state() {
            PageState::Source => {
                if used == 0 {
                    self.drain_source(page);
                }
                HandleFate::Released
            }
            PageState::NotFull => {
                if used == 0 {
                    self.cls.notfull.remove(arena, page);
                    self.release_page(page);
                }
                HandleFate::Released
            }
            PageState::Full => {
                self.cls.full.remove(arena, page);
                if used == 0 {
                    self.release_page(page);
                    return HandleFate::Released;
                }
                h.set_state(PageState::NotFull);
                self.cls.notfull.push_back(arena, page);
                if self.cls.kappa.exceeded_by(self.cls.notfull.len) {
                    return self.compact(page, block, handle);
                }
                HandleFate::Released
            }
            s => unreachable!("deallocation in a {s:?} page"),
        }
    }

    fn drain_source(&mut self, page: u32) {
        let h = self.core.arena.header(page);
        debug_assert_eq!(self.cls.source, Some(page));
        self.cls.source = None;
        if h.inflight() > 0 {
            h.set_state(PageState::Emptying);
            self.cls.pool_pages += 1;
            self.core.emptying.lock().insert(page);
            self.refresh_transient(page);
        } else {
            self.release_page(page);
        }
    }

    fn compact(&mut self, tgt_page: u32, tgt_block: u32, handle: Option<u32>) -> HandleFate {
        if self.core.cfg.iota.is_finite() {
            self.begin(tgt_page, tgt_block, handle.expect("moves need handles"))
        } else {
            self.compact_once(tgt_page, tgt_block);
            HandleFate::Released
        }
    }

    /// Moves one object from the head not-full page into the single free
    /// block of the page that just lost an object.
    fn compact_once(&mut self, tgt_page: u32, tgt_block: u32) {
        let arena = &self.core.arena;
        let src_page = self.cls.notfull.head;
        debug_assert_ne!(src_page, tgt_page);
        self.lock_pair(src_page, tgt_page);
        let src_block = arena.last_used(src_page, self.cls.pi, |_| true).expect("not-full page is non-empty");
        let from = self.offset(src_page, src_block);
        let to = self.offset(tgt_page, tgt_block);
        // SAFETY: both pages are locked by this unit.
        let object = unsafe { arena.read_u64(from) } as u32;

        arena.set_bit(tgt_page, tgt_block);
        let t_used = arena.header(tgt_page).used.fetch_add(1, Ordering::Relaxed) as usize + 1;
        debug_assert_eq!(t_used, self.cls.pi);
        self.make_full(tgt_page);

        arena.clear_bit(src_page, src_block);
        let s_used = arena.header(src_page).used.fetch_sub(1, Ordering::Relaxed) as usize - 1;
        if s_used == 0 {
            self.cls.notfull.remove(arena, src_page);
            self.release_page(src_page);
        }
        self.cls.counters.moves += 1;
        self.push(ClassEvent::Compact);
        self.plan = Some(CopyPlan { from, to, len: self.cls.beta, flip: Some((object, to as u64)) });
    }

    /// Initial incremental step.
    fn begin(&mut self, tgt_page: u32, tgt_block: u32, trigger: u32) -> HandleFate {
        let arena = &self.core.arena;
        let Some(sp) = self.cls.source else {
            let head = self.cls.notfull.head;
            debug_assert_ne!(head, tgt_page);
            self.cls.notfull.remove(arena, head);
            arena.header(head).set_state(PageState::Source);
            self.cls.source = Some(head);
            self.cls.counters.designations += 1;
            self.push(ClassEvent::Designate);
            return HandleFate::Released;
        };
        let pb = arena
            .last_used(sp, self.cls.pi, |b| self.role(sp, b) & 1 != super::ROLE_SOURCE || self.role(sp, b) == 0)
            .expect("source page holds a regular block");
        let conflict = if self.role(sp, pb) != 0 {
            Some(self.job_with_tgt(sp, pb).expect("target block has a job"))
        } else {
            None
        };
        let (src_page, src_block, conflict_id) = match conflict {
            Some(idx) => {
                let old = self.cls.jobs.remove(idx);
                self.core.stats.active_jobs.fetch_sub(1, Ordering::AcqRel);
                self.core.a2c[old.trigger as usize].fetch_or(CANCEL_BIT, Ordering::AcqRel);
                self.cls.counters.conflicts += 1;
                self.cls.counters.jobs_canceled += 1;
                (old.src_page, old.src_block, Some(old.id))
            }
            None => (sp, pb, None),
        };
        self.lock_pair(src_page, tgt_page);
        let sh = arena.header(sp);
        if conflict_id.is_some() {
            self.clear_role(sp, pb);
            arena.clear_bit(sp, pb);
        } else {
            sh.inflight.fetch_add(1, Ordering::Relaxed);
        }
        sh.used.fetch_sub(1, Ordering::Relaxed);

        arena.set_bit(tgt_page, tgt_block);
        let t_used = arena.header(tgt_page).used.fetch_add(1, Ordering::Relaxed) as usize + 1;
        debug_assert_eq!(t_used, self.cls.pi);
        self.make_full(tgt_page);

        let from = self.offset(src_page, src_block);
        // SAFETY: the source page is locked by this unit.
        let object = unsafe { arena.read_u64(from) } as u32;
        let id = self.cls.next_job;
        self.cls.next_job += 1;
        let job = Job { id, src_page, src_block, tgt_page, tgt_block, moved: 0, object, trigger };
        self.set_roles(&job);
        self.cls.jobs.push(job);
        let stats = &self.core.stats;
        let now = stats.active_jobs.fetch_add(1, Ordering::AcqRel) + 1;
        stats.peak_active_jobs.fetch_max(now, Ordering::AcqRel);
        self.cls.counters.jobs_started += 1;
        self.refresh_transient(sp);
        if sh.used() == 0 {
            self.drain_source(sp);
        }
        let (bytes, done, pool_freed) = self.advance(self.cls.jobs.len() - 1);
        self.push(ClassEvent::Begin { job: id, conflict: conflict_id, bytes, pool_freed });
        if done {
            HandleFate::Released
        } else {
            HandleFate::Trigger(id)
        }
    }

    /// Plans the next chunk of job `idx`, finishing it if the chunk is the last.
    fn advance(&mut self, idx: usize) -> (usize, bool, bool) {
        let job = self.cls.jobs[idx];
        let bytes = self.core.cfg.iota.min_with(self.cls.beta - job.moved);
        let from = self.offset(job.src_page, job.src_block) + job.moved;
        let to = self.offset(job.tgt_page, job.tgt_block) + job.moved;
        self.cls.jobs[idx].moved += bytes;
        let mut plan = CopyPlan { from, to, len: bytes, flip: None };
        let mut pool_freed = false;
        let done = job.moved + bytes == self.cls.beta;
        if done {
            let job = self.cls.jobs.remove(idx);
            pool_freed = self.finish_job(&job, false);
            plan.flip = Some((job.object, self.offset(job.tgt_page, job.tgt_block) as u64));
            self.cls.counters.jobs_completed += 1;
            self.cls.counters.moves += 1;
        }
        self.plan = Some(plan);
        (bytes, done, pool_freed)
    }

    /// Releases the source block of a finished or canceled job. Returns
    /// whether its pool page went back to the free list.
    fn finish_job(&mut self, job: &Job, canceled: bool) -> bool {
        let arena = &self.core.arena;
        self.core.stats.active_jobs.fetch_sub(1, Ordering::AcqRel);
        self.clear_role(job.src_page, job.src_block);
        self.clear_role(job.tgt_page, job.tgt_block);
        arena.clear_bit(job.src_page, job.src_block);
        let h = arena.header(job.src_page);
        let left = h.inflight.fetch_sub(1, Ordering::Relaxed) as usize - 1;
        let mut pool_freed = false;
        match h.state() {
            PageState::Emptying => {
                if left == 0 {
                    self.core.emptying.lock().remove(&job.src_page);
                    self.cls.pool_pages -= 1;
                    self.release_page(job.src_page);
                    pool_freed = true;
                }
            }
            PageState::Source => {
                self.refresh_transient(job.src_page);
                if left == 0 {
                    if canceled {
                        self.pending_conversion = true;
                    } else {
                        self.convert_source();
                    }
                }
            }
            s => unreachable!("in-flight source in a {s:?} page"),
        }
        pool_freed
    }

    fn convert_source(&mut self) {
        let Some(sp) = self.cls.source else { return };
        let arena = &self.core.arena;
        let h = arena.header(sp);
        if h.inflight() == 0 && !self.cls.kappa.exceeded_by(self.cls.notfull.len + 1) {
            self.cls.source = None;
            h.set_state(PageState::NotFull);
            self.cls.notfull.push_back(arena, sp);
            self.refresh_transient(sp);
        }
    }

    /// Deallocation of an object whose move is in flight: both copies are
    /// dropped and the move's trigger is flagged.
    fn cancel_dealloc(&mut self, idx: usize, handle: u32) -> HandleFate {
        let job = self.cls.jobs.remove(idx);
        self.core.a2c[job.trigger as usize].fetch_or(CANCEL_BIT, Ordering::AcqRel);
        self.cls.counters.jobs_canceled += 1;
        self.lock_pair(job.src_page, job.tgt_page);
        let pool_freed = self.finish_job(&job, true);
        let target = self.selector(job.tgt_page);
        self.push(ClassEvent::CancelDealloc { job: job.id, target, pool_freed });
        // the pair is not needed any more; a follow-up compaction locks its own
        self.pair = None;
        self.free_block(job.tgt_page, job.tgt_block, Some(handle))
    }

    /// One incremental step of job `id`.
    pub fn step(&mut self, id: u64) -> StepResult {
        let idx = self.cls.job_index(id).expect("live job");
        let job = self.cls.jobs[idx];
        self.lock_pair(job.src_page, job.tgt_page);
        let (bytes, done, pool_freed) = self.advance(idx);
        self.push(ClassEvent::Step { job: id, bytes, pool_freed });
        if done {
            StepResult::Completed
        } else {
            StepResult::Progress
        }
    }

    /// Ends the unit: applies deferred source conversion, checks the bound,
    /// records the log entry, and hands back the pending copy.
    pub fn finish(mut self) -> (Option<CopyPlan>, Option<PairGuard<'c>>) {
        if self.pending_conversion {
            self.convert_source();
        }
        if let Limit::Finite(k) = self.cls.kappa {
            if self.cls.notfull.len > k {
                self.core.stats.kappa_violations.fetch_add(1, Ordering::Relaxed);
            }
        }
        if self.logging && !self.events.is_empty() {
            let after = self.cls.project_incremental(&self.core.arena);
            let events = std::mem::take(&mut self.events);
            self.cls.log.as_mut().expect("logging").push(LogEntry { events, after });
        }
        (self.plan, self.pair)
    }
}
