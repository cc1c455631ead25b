//! Per-size-class bookkeeping, guarded by the class lock.

use std::sync::atomic::Ordering;

use super::arena::Arena;
use crate::automaton::{AutomatonState, IncrementalState, JobState, LogEntry, SourceState};
use crate::concurrent::freelist::NIL;
use crate::config::Limit;
use crate::heap::arena::PageState;

/// Doubly-linked page list threaded through page headers.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PageList {
    pub head: u32,
    pub tail: u32,
    pub len: usize,
}

impl PageList {
    pub const fn new() -> Self {
        PageList { head: NIL, tail: NIL, len: 0 }
    }

    pub fn push_back(&mut self, arena: &Arena, page: u32) {
        let h = arena.header(page);
        h.prev.store(self.tail, Ordering::Relaxed);
        h.next.store(NIL, Ordering::Relaxed);
        if self.tail == NIL {
            self.head = page;
        } else {
            arena.header(self.tail).next.store(page, Ordering::Relaxed);
        }
        self.tail = page;
        self.len += 1;
    }

    pub fn remove(&mut self, arena: &Arena, page: u32) {
        let h = arena.header(page);
        let prev = h.prev.load(Ordering::Relaxed);
        let next = h.next.load(Ordering::Relaxed);
        if prev == NIL {
            debug_assert_eq!(self.head, page);
            self.head = next;
        } else {
            arena.header(prev).next.store(next, Ordering::Relaxed);
        }
        if next == NIL {
            debug_assert_eq!(self.tail, page);
            self.tail = prev;
        } else {
            arena.header(next).prev.store(prev, Ordering::Relaxed);
        }
        h.prev.store(NIL, Ordering::Relaxed);
        h.next.store(NIL, Ordering::Relaxed);
        self.len -= 1;
    }

    pub fn iter<'a>(&self, arena: &'a Arena) -> impl Iterator<Item = u32> + 'a {
        let mut cur = self.head;
        std::iter::from_fn(move || {
            if cur == NIL {
                return None;
            }
            let p = cur;
            cur = arena.header(p).next.load(Ordering::Relaxed);
            Some(p)
        })
    }

    pub fn position(&self, arena: &Arena, page: u32) -> usize {
        self.iter(arena).position(|p| p == page).expect("page on list")
    }
}

/// An in-flight incremental move.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Job {
    pub id: u64,
    pub src_page: u32,
    pub src_block: u32,
    pub tgt_page: u32,
    pub tgt_block: u32,
    pub moved: usize,
    /// Handle of the object being moved.
    pub object: u32,
    /// Handle reserved by the deallocation that started the move; carries
    /// the cancel flag.
    pub trigger: u32,
}

#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct ClassCounters {
    pub allocs: u64,
    pub frees: u64,
    pub moves: u64,
    pub designations: u64,
    pub jobs_started: u64,
    pub jobs_completed: u64,
    pub jobs_canceled: u64,
    pub conflicts: u64,
}

pub(crate) struct ClassState {
    pub class: usize,
    pub beta: usize,
    pub pi: usize,
    pub kappa: Limit,
    pub notfull: PageList,
    pub full: PageList,
    pub h: usize,
    pub source: Option<u32>,
    pub pool_pages: usize,
    pub jobs: Vec<Job>,
    pub next_job: u64,
    pub log: Option<Vec<LogEntry>>,
    pub counters: ClassCounters,
}

impl ClassState {
    pub fn new(class: usize, beta: usize, pi: usize, kappa: Limit, record: bool) -> Self {
        ClassState {
            class,
            beta,
            pi,
            kappa,
            notfull: PageList::new(),
            full: PageList::new(),
            h: 0,
            source: None,
            pool_pages: 0,
            jobs: Vec::new(),
            next_job: 1,
            log: record.then(Vec::new),
            counters: ClassCounters::default(),
        }
    }

    pub fn job_index(&self, id: u64) -> Option<usize> {
        self.jobs.iter().position(|j| j.id == id)
    }

    pub fn project(&self, arena: &Arena) -> AutomatonState {
        AutomatonState { h: self.h, u: self.notfull.iter(arena).map(|p| arena.header(p).used()).collect() }
    }

    pub fn project_incremental(&self, arena: &Arena) -> IncrementalState {
        let source = self.source.map(|p| {
            let h = arena.header(p);
            SourceState { used: h.used(), inflight: h.inflight() }
        });
        let mut jobs: Vec<JobState> = self
            .jobs
            .iter()
            .map(|j| JobState {
                id: j.id,
                moved: j.moved,
                in_pool: arena.header(j.src_page).state() == PageState::Emptying,
            })
            .collect();
        jobs.sort_by_key(|j| j.id);
        IncrementalState { base: self.project(arena), source, jobs, pool_pages: self.pool_pages }
    }
}
