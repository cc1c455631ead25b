//! The compacting heap.
//!
//! Memory is split into equal pages, every page serving one size class at a
//! time. Objects are reached through handles: in abstract mode a handle
//! indexes the address table, whose entry holds the object's current
//! location, so objects can move; in direct mode the handle is the object's
//! offset and objects never move.
//!
//! [`SharedHeap`] owns the memory and is cheap to clone across threads;
//! every thread allocates through its own [`Mutator`]. [`Heap`] bundles one
//! of each for single-threaded use.

pub mod arena;
mod class;
pub mod layout;
mod ops;

use std::collections::BTreeSet;
use std::ops::{Deref, DerefMut};
use std::sync::atomic::{AtomicU32, AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, MutexGuard};

pub use arena::PageState;
pub use layout::{ClassLayout, Geometry, BACKLINK_BYTES};

use self::arena::{Arena, PageLinks};
use self::class::ClassState;
use self::ops::{HandleFate, PairGuard, StepResult, Unit};
use crate::automaton::{AutomatonState, IncrementalState, LogEntry};
use crate::concurrent::freelist::{zeroed_atomics, AuxNodes, PrivateList, PublicList, NIL};
use crate::config::{Addressing, ClassScope, HeapConfig, Limit, LockRegime};
use crate::error::{ContractError, HeapError, Result};

// Address-table entries: 0 is free, otherwise an arena offset (a multiple
// of 8) with the two low bits used as flags on retained trigger handles.
const FREE: u64 = 0;
pub(crate) const CANCEL_BIT: u64 = 1;
const TRIGGER_BIT: u64 = 2;
const FLAG_MASK: u64 = CANCEL_BIT | TRIGGER_BIT;

pub(crate) const ROLE_SOURCE: u64 = 0;
pub(crate) const ROLE_TARGET: u64 = 1;

/// An object reference handed out by the heap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Handle(u64);

impl Handle {
    pub fn raw(self) -> u64 {
        self.0
    }

    pub fn from_raw(raw: u64) -> Handle {
        Handle(raw)
    }
}

/// Where an object currently lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Location {
    pub page: u32,
    pub block: u32,
    /// Byte offset of the block from the start of the arena.
    pub offset: usize,
    pub slot: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FreeOutcome {
    Done,
    /// A move was started and must be driven with [`Mutator::step`].
    Pending,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Idle,
    Progress,
    Completed,
    /// Another thread's deallocation dropped the move.
    Canceled,
}

#[derive(Default)]
struct Stats {
    pages_in_use: AtomicUsize,
    peak_pages_in_use: AtomicUsize,
    transient_pages: AtomicUsize,
    peak_transient_pages: AtomicUsize,
    active_jobs: AtomicUsize,
    peak_active_jobs: AtomicUsize,
    kappa_violations: AtomicU64,
    max_step_bytes: AtomicUsize,
    copy_steps: AtomicU64,
    bytes_copied: AtomicU64,
}

/// Counters of the whole heap.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HeapStats {
    pub allocs: u64,
    pub frees: u64,
    pub moves: u64,
    pub designations: u64,
    pub jobs_started: u64,
    pub jobs_completed: u64,
    pub jobs_canceled: u64,
    pub conflicts: u64,
    pub copy_steps: u64,
    pub bytes_copied: u64,
    /// Largest number of bytes copied by one atomic step.
    pub max_step_bytes: usize,
    pub pages_in_use: usize,
    pub peak_pages_in_use: usize,
    pub transient_pages: usize,
    pub peak_transient_pages: usize,
    pub active_jobs: usize,
    pub peak_active_jobs: usize,
    /// Units that ended with more not-full pages than the bound allows.
    pub kappa_violations: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassReport {
    pub slot: usize,
    pub class: usize,
    pub block_bytes: usize,
    pub pi: usize,
    pub kappa: Limit,
    pub objects: usize,
    pub not_full_pages: usize,
    pub full_pages: usize,
    pub source_pages: usize,
    pub pool_pages: usize,
    /// Free blocks in not-full pages.
    pub fragmentation_blocks: usize,
}

impl ClassReport {
    pub fn pages(&self) -> usize {
        self.not_full_pages + self.full_pages + self.source_pages + self.pool_pages
    }

    pub fn fragmentation_bytes(&self) -> usize {
        self.fragmentation_blocks * self.block_bytes
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FragmentationReport {
    pub classes: Vec<ClassReport>,
    pub pages_in_use: usize,
    pub free_pages: usize,
    pub page_bytes: usize,
}

impl FragmentationReport {
    pub fn fragmentation_bytes(&self) -> usize {
        self.classes.iter().map(ClassReport::fragmentation_bytes).sum()
    }

    pub fn not_full_pages(&self) -> usize {
        self.classes.iter().map(|c| c.not_full_pages).sum()
    }

    pub fn objects(&self) -> usize {
        self.classes.iter().map(|c| c.objects).sum()
    }
}

#[repr(align(128))]
struct ClassSlot {
    state: Mutex<ClassState>,
}

pub(crate) struct HeapCore {
    cfg: HeapConfig,
    geo: Geometry,
    layouts: Vec<ClassLayout>,
    arena: Arena,
    page_locks: Box<[Mutex<()>]>,
    slots: Box<[ClassSlot]>,
    free_pages: PublicList,
    a2c: Box<[AtomicU64]>,
    handle_nodes: AuxNodes,
    free_handles: PublicList,
    fresh_handles: AtomicU32,
    roles: Box<[AtomicU64]>,
    emptying: Mutex<BTreeSet<u32>>,
    stats: Stats,
    mutator_ids: Mutex<(usize, Vec<usize>)>,
}

impl HeapCore {
    fn new(cfg: HeapConfig) -> Result<HeapCore> {
        let (geo, layouts) = layout::resolve(&cfg)?;
        let arena = Arena::new(geo)?;
        let nclasses = layouts.len();
        let nslots = match cfg.class_scope {
            ClassScope::Global => nclasses,
            ClassScope::ThreadLocal => nclasses * cfg.max_mutators,
        };
        let slots = (0..nslots)
            .map(|s| {
                let c = s % nclasses;
                let l = layouts[c];
                ClassSlot { state: Mutex::new(ClassState::new(c, l.beta, l.pi, cfg.kappa_of(c), cfg.record_logs)) }
            })
            .collect();
        let blocks = geo.pages * geo.slots_per_page;
        let handles = match cfg.addressing {
            Addressing::Abstract => blocks + cfg.max_mutators,
            Addressing::Direct => 0,
        };
        if handles >= NIL as usize {
            return Err(HeapError::Config("too many handles for 32-bit indices".into()));
        }
        let slots: Box<[ClassSlot]> = slots;
        assert_eq!(slots.as_ptr() as usize % 128, 0, "class records must be 128-byte aligned");
        let roles = if cfg.iota.is_finite() { zeroed_atomics(blocks) } else { Box::default() };
        let free_pages = PublicList::new();
        crate::concurrent::freelist::seed(&PageLinks(&arena), &free_pages, geo.pages as u32, cfg.spill_bound);
        Ok(HeapCore {
            page_locks: (0..geo.pages).map(|_| Mutex::new(())).collect(),
            slots,
            free_pages,
            a2c: zeroed_atomics(handles),
            handle_nodes: AuxNodes::new(handles),
            free_handles: PublicList::new(),
            fresh_handles: AtomicU32::new(0),
            roles,
            emptying: Mutex::new(BTreeSet::new()),
            stats: Stats::default(),
            mutator_ids: Mutex::new((0, Vec::new())),
            cfg,
            geo,
            layouts,
            arena,
        })
    }

    fn page_links(&self) -> PageLinks<'_> {
        PageLinks(&self.arena)
    }

    fn lock_pair(&self, a: u32, b: u32) -> PairGuard<'_> {
        debug_assert_ne!(a, b);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        (self.page_locks[lo as usize].lock(), self.page_locks[hi as usize].lock())
    }

    fn layout_of_slot(&self, slot: usize) -> ClassLayout {
        self.layouts[slot % self.layouts.len()]
    }

    fn slot_for(&self, mutator: usize, class: usize) -> usize {
        match self.cfg.class_scope {
            ClassScope::Global => class,
            ClassScope::ThreadLocal => mutator * self.layouts.len() + class,
        }
    }

    fn class_for_size(&self, size: usize) -> Result<usize> {
        self.layouts
            .iter()
            .position(|l| l.usable >= size)
            .ok_or(HeapError::UnsupportedSize { size, max: self.layouts.last().map_or(0, |l| l.usable) })
    }

    /// Runs `f` as one unit under `guard`, then performs the copy it planned.
    fn run_unit<R>(
        &self,
        mut guard: MutexGuard<'_, ClassState>,
        slot: usize,
        pages: &mut PrivateList,
        f: impl FnOnce(&mut Unit<'_, '_>) -> R,
    ) -> R {
        let mut unit = Unit::new(self, &mut guard, slot, pages);
        let r = f(&mut unit);
        let (plan, pair) = unit.finish();
        if self.cfg.lock_regime == LockRegime::Page {
            drop(guard);
        }
        if let Some(plan) = plan {
            // SAFETY: the unit holds both page locks.
            unsafe { self.arena.copy(plan.from, plan.to, plan.len) };
            if let Some((object, to)) = plan.flip {
                self.a2c[object as usize].store(to, Ordering::Release);
            }
            self.stats.copy_steps.fetch_add(1, Ordering::Relaxed);
            self.stats.bytes_copied.fetch_add(plan.len as u64, Ordering::Relaxed);
            self.stats.max_step_bytes.fetch_max(plan.len, Ordering::Relaxed);
        }
        drop(pair);
        r
    }

    fn handle_index(&self, h: Handle) -> Result<usize> {
        let i = h.0 as usize;
        if i >= self.fresh_handles.load(Ordering::Acquire) as usize {
            return Err(HeapError::InvalidHandle(h.0));
        }
        Ok(i)
    }

    /// Live address-table entry of `h`.
    fn entry(&self, h: Handle) -> Result<u64> {
        let e = self.a2c[self.handle_index(h)?].load(Ordering::Acquire);
        if e == FREE || e & FLAG_MASK != 0 {
            return Err(HeapError::DoubleFree(h.0));
        }
        Ok(e)
    }

    /// Page, block and class slot of an object at arena offset `off`.
    fn block_at(&self, off: usize, raw: u64) -> Result<(u32, u32, usize)> {
        let (page, within) = self.arena.locate(off).ok_or(HeapError::InvalidHandle(raw))?;
        let owner = self.arena.header(page).owner();
        if owner == NIL {
            return Err(HeapError::InvalidHandle(raw));
        }
        let l = self.layout_of_slot(owner as usize);
        if within % l.beta != 0 || within / l.beta >= l.pi {
            return Err(HeapError::InvalidHandle(raw));
        }
        Ok((page, (within / l.beta) as u32, owner as usize))
    }

    /// Live entry of `h` and the block it names. The entry is read without
    /// locks and a finishing move releases its source page before the entry
    /// flips, so a failed lookup is retried under the page lock.
    fn locate(&self, hid: usize, h: Handle) -> Result<(u64, u32, u32, usize)> {
        loop {
            let e = self.entry(h)?;
            let err = match self.block_at(e as usize, h.0) {
                Ok((page, block, slot)) => return Ok((e, page, block, slot)),
                Err(err) => err,
            };
            if let Some((page, _)) = self.arena.locate(e as usize) {
                let _g = self.page_locks[page as usize].lock();
                if self.a2c[hid].load(Ordering::Acquire) != e || self.block_at(e as usize, h.0).is_ok() {
                    continue;
                }
            }
            return Err(err);
        }
    }

    fn gid(&self, page: u32, block: u32) -> usize {
        page as usize * self.geo.slots_per_page + block as usize
    }

    fn ungid(&self, gid: usize) -> (u32, u32) {
        ((gid / self.geo.slots_per_page) as u32, (gid % self.geo.slots_per_page) as u32)
    }

    fn pop_handle(&self, private: &mut PrivateList) -> Result<u32> {
        if let Some(h) = private.pop(&self.handle_nodes, &self.free_handles) {
            return Ok(h);
        }
        let cap = self.a2c.len() as u32;
        self.fresh_handles
            .fetch_update(Ordering::AcqRel, Ordering::Acquire, |n| (n < cap).then_some(n + 1))
            .map_err(|_| HeapError::OutOfHandles)
    }

    fn push_handle(&self, private: &mut PrivateList, h: u32) {
        private.push(&self.handle_nodes, &self.free_handles, self.cfg.spill_bound, h);
    }
}

/// Shared ownership of a heap; clone it to hand the heap to other threads.
#[derive(Clone)]
pub struct SharedHeap {
    core: Arc<HeapCore>,
}

impl SharedHeap {
    pub fn new(cfg: HeapConfig) -> Result<SharedHeap> {
        Ok(SharedHeap { core: Arc::new(HeapCore::new(cfg)?) })
    }

    /// Registers a new mutator.
    pub fn mutator(&self) -> Result<Mutator> {
        let index = {
            let mut ids = self.core.mutator_ids.lock();
            match ids.1.pop() {
                Some(i) => i,
                None if ids.0 < self.core.cfg.max_mutators => {
                    ids.0 += 1;
                    ids.0 - 1
                }
                None => return Err(HeapError::TooManyMutators(self.core.cfg.max_mutators)),
            }
        };
        Ok(Mutator {
            core: self.core.clone(),
            index,
            pages: PrivateList::new(),
            handles: PrivateList::new(),
            pending: None,
        })
    }

    pub fn config(&self) -> &HeapConfig {
        &self.core.cfg
    }

    pub fn class_record_align(&self) -> usize {
        std::mem::align_of::<ClassSlot>()
    }

    pub fn geometry(&self) -> Geometry {
        self.core.geo
    }

    pub fn layouts(&self) -> &[ClassLayout] {
        &self.core.layouts
    }

    /// Number of class slots: one per class, times the mutator limit when
    /// classes are per thread.
    pub fn slots(&self) -> usize {
        self.core.slots.len()
    }

    pub fn slot_for(&self, mutator: usize, class: usize) -> usize {
        self.core.slot_for(mutator, class)
    }

    pub fn class_for_size(&self, size: usize) -> Result<usize> {
        self.core.class_for_size(size)
    }

    /// Automaton state of one class slot.
    pub fn project_state(&self, slot: usize) -> AutomatonState {
        self.core.slots[slot].state.lock().project(&self.core.arena)
    }

    pub fn project_incremental(&self, slot: usize) -> IncrementalState {
        self.core.slots[slot].state.lock().project_incremental(&self.core.arena)
    }

    /// Drains the transition log of a slot (empty unless logs are recorded).
    pub fn take_log(&self, slot: usize) -> Vec<LogEntry> {
        self.core.slots[slot].state.lock().log.as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub fn stats(&self) -> HeapStats {
        let s = &self.core.stats;
        let mut out = HeapStats {
            copy_steps: s.copy_steps.load(Ordering::Relaxed),
            bytes_copied: s.bytes_copied.load(Ordering::Relaxed),
            max_step_bytes: s.max_step_bytes.load(Ordering::Relaxed),
            pages_in_use: s.pages_in_use.load(Ordering::Relaxed),
            peak_pages_in_use: s.peak_pages_in_use.load(Ordering::Relaxed),
            transient_pages: s.transient_pages.load(Ordering::Relaxed),
            peak_transient_pages: s.peak_transient_pages.load(Ordering::Relaxed),
            active_jobs: s.active_jobs.load(Ordering::Relaxed),
            peak_active_jobs: s.peak_active_jobs.load(Ordering::Relaxed),
            kappa_violations: s.kappa_violations.load(Ordering::Relaxed),
            ..HeapStats::default()
        };
        for slot in self.core.slots.iter() {
            let c = slot.state.lock().counters;
            out.allocs += c.allocs;
            out.frees += c.frees;
            out.moves += c.moves;
            out.designations += c.designations;
            out.jobs_started += c.jobs_started;
            out.jobs_completed += c.jobs_completed;
            out.jobs_canceled += c.jobs_canceled;
            out.conflicts += c.conflicts;
        }
        out
    }

    pub fn fragmentation_report(&self) -> FragmentationReport {
        let arena = &self.core.arena;
        let classes: Vec<ClassReport> = self
            .core
            .slots
            .iter()
            .enumerate()
            .map(|(slot, s)| {
                let c = s.state.lock();
                ClassReport {
                    slot,
                    class: c.class,
                    block_bytes: c.beta,
                    pi: c.pi,
                    kappa: c.kappa,
                    objects: c.h,
                    not_full_pages: c.notfull.len,
                    full_pages: c.full.len,
                    source_pages: usize::from(c.source.is_some()),
                    pool_pages: c.pool_pages,
                    fragmentation_blocks: c.notfull.iter(arena).map(|p| c.pi - arena.header(p).used()).sum(),
                }
            })
            .collect();
        let pages_in_use = self.core.stats.pages_in_use.load(Ordering::Relaxed);
        FragmentationReport {
            classes,
            pages_in_use,
            free_pages: self.core.geo.pages - pages_in_use,
            page_bytes: self.core.geo.page_bytes,
        }
    }

    /// Checks every structural invariant. Only meaningful while no mutator
    /// is running.
    pub fn audit(&self) -> std::result::Result<(), ContractError> {
        let core = &*self.core;
        let arena = &core.arena;
        let fail = |m: String| Err(ContractError(m));
        let mut owned = vec![false; core.geo.pages];
        let mut live_objects = 0usize;
        let mut inflight_total = 0usize;
        for (slot, s) in core.slots.iter().enumerate() {
            let c = s.state.lock();
            let mut regular = 0;
            for (list, want) in [(&c.notfull, PageState::NotFull), (&c.full, PageState::Full)] {
                let mut n = 0;
                for p in list.iter(arena) {
                    n += 1;
                    let h = arena.header(p);
                    if h.state() != want || h.owner() as usize != slot {
                        return fail(format!("slot {slot}: page {p} is {:?} owned by {}", h.state(), h.owner()));
                    }
                    if h.used() != arena.popcount(p) || h.inflight() != 0 {
                        return fail(format!("slot {slot}: page {p} used count disagrees with its bitmap"));
                    }
                    let ok = match want {
                        PageState::Full => h.used() == c.pi,
                        _ => h.used() > 0 && h.used() < c.pi,
                    };
                    if !ok {
                        return fail(format!("slot {slot}: page {p} holds {} of {} blocks", h.used(), c.pi));
                    }
                    owned[p as usize] = true;
                    regular += h.used();
                }
                if n != list.len {
                    return fail(format!("slot {slot}: list length {} but {n} pages linked", list.len));
                }
            }
            if let Some(sp) = c.source {
                let h = arena.header(sp);
                let jobs = c.jobs.iter().filter(|j| j.src_page == sp).count();
                if h.state() != PageState::Source || h.inflight() != jobs || h.used() == 0 {
                    return fail(format!("slot {slot}: source page {sp} inconsistent"));
                }
                if arena.popcount(sp) != h.used() + h.inflight() {
                    return fail(format!("slot {slot}: source page {sp} bitmap disagrees"));
                }
                owned[sp as usize] = true;
                regular += h.used();
            }
            if regular != c.h {
                return fail(format!("slot {slot}: {} objects recorded, {regular} found", c.h));
            }
            if c.kappa.exceeded_by(c.notfull.len) {
                return fail(format!("slot {slot}: {} not-full pages exceed {}", c.notfull.len, c.kappa));
            }
            for j in &c.jobs {
                let r = core.roles[core.gid(j.src_page, j.src_block)].load(Ordering::Acquire);
                if r != ((core.gid(j.tgt_page, j.tgt_block) as u64 + 1) << 1) | ROLE_SOURCE {
                    return fail(format!("slot {slot}: job {} has a stale role entry", j.id));
                }
            }
            live_objects += c.h;
            inflight_total += c.jobs.len();
        }
        let pool = core.emptying.lock();
        let mut used_pages = 0;
        for p in 0..core.geo.pages as u32 {
            let h = arena.header(p);
            match h.state() {
                PageState::Free => {
                    if arena.popcount(p) != 0 || h.owner() != NIL {
                        return fail(format!("free page {p} still holds blocks"));
                    }
                }
                PageState::Emptying => {
                    if !pool.contains(&p) || h.inflight() == 0 || arena.popcount(p) != h.inflight() {
                        return fail(format!("pool page {p} inconsistent"));
                    }
                    used_pages += 1;
                }
                s => {
                    if !owned[p as usize] {
                        return fail(format!("{s:?} page {p} is on no list"));
                    }
                    used_pages += 1;
                }
            }
        }
        if used_pages != core.stats.pages_in_use.load(Ordering::Relaxed) {
            return fail(format!("{used_pages} pages in use, counter says otherwise"));
        }
        if core.cfg.addressing == Addressing::Abstract {
            let mut live = 0;
            let issued = core.fresh_handles.load(Ordering::Acquire) as usize;
            for (i, e) in core.a2c[..issued].iter().enumerate() {
                let e = e.load(Ordering::Acquire);
                if e == FREE || e & FLAG_MASK != 0 {
                    continue;
                }
                live += 1;
                let Ok((page, block, _)) = core.block_at(e as usize, i as u64) else {
                    return fail(format!("handle {i} points outside any block"));
                };
                if !arena.bit(page, block) {
                    return fail(format!("handle {i} points at a free block"));
                }
                let _g = core.page_locks[page as usize].lock();
                // SAFETY: the page lock is held and the offset is a block start.
                let back = unsafe { arena.read_u64(e as usize) };
                if back != i as u64 {
                    return fail(format!("handle {i} backlink reads {back}"));
                }
            }
            if live != live_objects {
                return fail(format!("{live} live handles for {live_objects} objects"));
            }
        }
        let _ = inflight_total;
        Ok(())
    }
}

struct Pending {
    slot: usize,
    job: u64,
    trigger: u32,
}

/// One thread's access point to a [`SharedHeap`].
pub struct Mutator {
    core: Arc<HeapCore>,
    index: usize,
    pages: PrivateList,
    handles: PrivateList,
    pending: Option<Pending>,
}

impl Mutator {
    pub fn index(&self) -> usize {
        self.index
    }

    pub fn has_pending(&self) -> bool {
        self.pending.is_some()
    }

    /// Allocates an object of at least `size` usable bytes.
    pub fn alloc(&mut self, size: usize) -> Result<Handle> {
        let class = self.core.class_for_size(size)?;
        self.alloc_class(class)
    }

    /// Allocates an object holding `payload`.
    pub fn alloc_bytes(&mut self, payload: &[u8]) -> Result<Handle> {
        let h = self.alloc(payload.len())?;
        self.write(h, 0, payload)?;
        Ok(h)
    }

    pub fn alloc_class(&mut self, class: usize) -> Result<Handle> {
        if self.pending.is_some() {
            return Err(HeapError::CompactionPending);
        }
        if class >= self.core.layouts.len() {
            return Err(HeapError::Config(format!("no size class {class}")));
        }
        let core = &*self.core;
        let slot = core.slot_for(self.index, class);
        let direct = core.cfg.addressing == Addressing::Direct;
        let hid = if direct { NIL } else { core.pop_handle(&mut self.handles)? };
        let guard = core.slots[slot].state.lock();
        let beta = guard.beta;
        let placed = core.run_unit(guard, slot, &mut self.pages, |unit| {
            let (page, block) = unit.alloc()?;
            let off = core.arena.block_offset(page, block, beta);
            if !direct {
                let _g = core.page_locks[page as usize].lock();
                // SAFETY: page lock held; the block belongs to this class.
                unsafe { core.arena.write_u64(off, hid as u64) };
                core.a2c[hid as usize].store(off as u64, Ordering::Release);
            }
            Ok(off)
        });
        match placed {
            Ok(off) if direct => Ok(Handle(off as u64)),
            Ok(_) => Ok(Handle(hid as u64)),
            Err(e) => {
                if !direct {
                    core.push_handle(&mut self.handles, hid);
                }
                Err(e)
            }
        }
    }

    /// Frees `h`, completing any compaction it triggers before returning.
    pub fn free(&mut self, h: Handle) -> Result<()> {
        self.free_incremental(h)?;
        self.drive_to_completion();
        Ok(())
    }

    /// Frees `h` and performs only the first compaction step.
    pub fn free_incremental(&mut self, h: Handle) -> Result<FreeOutcome> {
        if self.pending.is_some() {
            return Err(HeapError::CompactionPending);
        }
        if self.core.cfg.addressing == Addressing::Direct {
            return self.free_direct(h);
        }
        let core = &*self.core;
        let hid = core.handle_index(h)?;
        loop {
            let (e, page, block, slot) = core.locate(hid, h)?;
            let guard = core.slots[slot].state.lock();
            {
                let _g = core.page_locks[page as usize].lock();
                if core.a2c[hid].load(Ordering::Acquire) != e || core.arena.header(page).owner() as usize != slot {
                    continue;
                }
                // SAFETY: page lock held, `e` is a block start.
                if unsafe { core.arena.read_u64(e as usize) } != hid as u64 {
                    return Err(HeapError::InvalidHandle(h.0));
                }
            }
            let fate = core.run_unit(guard, slot, &mut self.pages, |unit| {
                let fate = unit.dealloc(page, block, Some(hid as u32));
                let word = match fate {
                    HandleFate::Released => FREE,
                    HandleFate::Trigger(_) => e | TRIGGER_BIT,
                };
                core.a2c[hid].store(word, Ordering::Release);
                fate
            });
            return Ok(match fate {
                HandleFate::Released => {
                    core.push_handle(&mut self.handles, hid as u32);
                    FreeOutcome::Done
                }
                HandleFate::Trigger(job) => {
                    self.pending = Some(Pending { slot, job, trigger: hid as u32 });
                    FreeOutcome::Pending
                }
            });
        }
    }

    fn free_direct(&mut self, h: Handle) -> Result<FreeOutcome> {
        let core = &*self.core;
        loop {
            let (page, block, slot) = core.block_at(h.0 as usize, h.0)?;
            let guard = core.slots[slot].state.lock();
            let hd = core.arena.header(page);
            if hd.owner() as usize != slot {
                continue;
            }
            if !matches!(hd.state(), PageState::NotFull | PageState::Full) || !core.arena.bit(page, block) {
                return Err(HeapError::DoubleFree(h.0));
            }
            core.run_unit(guard, slot, &mut self.pages, |unit| unit.dealloc(page, block, None));
            return Ok(FreeOutcome::Done);
        }
    }

    /// Performs one step of the pending move, if any.
    pub fn step(&mut self) -> StepOutcome {
        let Some(p) = self.pending.as_ref() else {
            return StepOutcome::Idle;
        };
        let (slot, job, trigger) = (p.slot, p.job, p.trigger);
        let core = &*self.core;
        let guard = core.slots[slot].state.lock();
        if core.a2c[trigger as usize].load(Ordering::Acquire) & CANCEL_BIT != 0 {
            core.a2c[trigger as usize].store(FREE, Ordering::Release);
            drop(guard);
            core.push_handle(&mut self.handles, trigger);
            self.pending = None;
            return StepOutcome::Canceled;
        }
        let r = core.run_unit(guard, slot, &mut self.pages, |unit| {
            let r = unit.step(job);
            if r == StepResult::Completed {
                core.a2c[trigger as usize].store(FREE, Ordering::Release);
            }
            r
        });
        match r {
            StepResult::Progress => StepOutcome::Progress,
            StepResult::Completed => {
                core.push_handle(&mut self.handles, trigger);
                self.pending = None;
                StepOutcome::Completed
            }
        }
    }

    /// Steps the pending move until it completes or is canceled.
    pub fn drive_to_completion(&mut self) -> StepOutcome {
        let mut last = StepOutcome::Idle;
        loop {
            match self.step() {
                StepOutcome::Idle => return last,
                StepOutcome::Progress => last = StepOutcome::Progress,
                done => return done,
            }
        }
    }

    /// Usable bytes of the object behind `h`.
    pub fn usable_size(&self, h: Handle) -> Result<usize> {
        Ok(self.core.layout_of_slot(self.dereference(h)?.slot).usable)
    }

    /// Current location of the object.
    pub fn dereference(&self, h: Handle) -> Result<Location> {
        let core = &*self.core;
        if core.cfg.addressing == Addressing::Direct {
            let (page, block, slot) = core.block_at(h.0 as usize, h.0)?;
            if !core.arena.bit(page, block) {
                return Err(HeapError::DoubleFree(h.0));
            }
            return Ok(Location { page, block, offset: h.0 as usize, slot });
        }
        let hid = core.handle_index(h)?;
        loop {
            let (e, page, block, slot) = core.locate(hid, h)?;
            let _g = core.page_locks[page as usize].lock();
            if core.a2c[hid].load(Ordering::Acquire) == e {
                return Ok(Location { page, block, offset: e as usize, slot });
            }
        }
    }

    fn payload_range(&self, loc: &Location, offset: usize, len: usize) -> Result<usize> {
        let usable = self.core.layout_of_slot(loc.slot).usable;
        if offset.checked_add(len).is_none_or(|end| end > usable) {
            return Err(HeapError::OutOfBounds { offset, len, usable });
        }
        let header = match self.core.cfg.addressing {
            Addressing::Abstract => BACKLINK_BYTES,
            Addressing::Direct => 0,
        };
        Ok(header + offset)
    }

    pub fn read(&self, h: Handle, offset: usize, buf: &mut [u8]) -> Result<()> {
        let core = &*self.core;
        loop {
            let loc = self.dereference(h)?;
            let rel = self.payload_range(&loc, offset, buf.len())?;
            let _g = core.page_locks[loc.page as usize].lock();
            if !self.still_at(h, &loc) {
                continue;
            }
            // SAFETY: page lock held, range checked against the block.
            unsafe { core.arena.read(loc.offset + rel, buf) };
            return Ok(());
        }
    }

    pub fn write(&self, h: Handle, offset: usize, data: &[u8]) -> Result<()> {
        let core = &*self.core;
        loop {
            let loc = self.dereference(h)?;
            let rel = self.payload_range(&loc, offset, data.len())?;
            let g = core.page_locks[loc.page as usize].lock();
            if !self.still_at(h, &loc) {
                continue;
            }
            let role = core.roles.get(core.gid(loc.page, loc.block)).map_or(0, |r| r.load(Ordering::Acquire));
            if role == 0 || role & 1 != ROLE_SOURCE {
                // SAFETY: page lock held, range checked against the block.
                unsafe { core.arena.write(loc.offset + rel, data) };
                return Ok(());
            }
            drop(g);
            // In flight: update both copies so the move cannot lose the write.
            let (tp, tb) = core.ungid((role >> 1) as usize - 1);
            let _pair = core.lock_pair(loc.page, tp);
            let now = core.roles[core.gid(loc.page, loc.block)].load(Ordering::Acquire);
            if !self.still_at(h, &loc) || now != role {
                continue;
            }
            let to = core.arena.block_offset(tp, tb, core.layout_of_slot(loc.slot).beta);
            // SAFETY: both page locks held.
            unsafe {
                core.arena.write(loc.offset + rel, data);
                core.arena.write(to + rel, data);
            }
            return Ok(());
        }
    }

    fn still_at(&self, h: Handle, loc: &Location) -> bool {
        let core = &*self.core;
        match core.cfg.addressing {
            Addressing::Direct => core.arena.bit(loc.page, loc.block),
            Addressing::Abstract => core.a2c[h.0 as usize].load(Ordering::Acquire) == loc.offset as u64,
        }
    }

    /// Arena address of an object's usable bytes; only stable in direct mode.
    pub fn address(&self, h: Handle) -> Result<usize> {
        let loc = self.dereference(h)?;
        Ok(self.core.arena.base_addr() + loc.offset + self.payload_range(&loc, 0, 0)?)
    }
}

impl Drop for Mutator {
    fn drop(&mut self) {
        if std::thread::panicking() {
            return;
        }
        self.drive_to_completion();
        let core = &*self.core;
        self.pages.flush(&core.page_links(), &core.free_pages);
        self.handles.flush(&core.handle_nodes, &core.free_handles);
        core.mutator_ids.lock().1.push(self.index);
    }
}

/// A heap with a single built-in mutator.
pub struct Heap {
    shared: SharedHeap,
    mutator: Mutator,
}

impl Heap {
    pub fn new(cfg: HeapConfig) -> Result<Heap> {
        let shared = SharedHeap::new(cfg)?;
        let mutator = shared.mutator()?;
        Ok(Heap { shared, mutator })
    }

    pub fn shared(&self) -> &SharedHeap {
        &self.shared
    }

    /// Automaton state of size class `class`.
    pub fn project_state(&self, class: usize) -> AutomatonState {
        self.shared.project_state(self.shared.slot_for(self.mutator.index, class))
    }

    pub fn project_incremental(&self, class: usize) -> IncrementalState {
        self.shared.project_incremental(self.shared.slot_for(self.mutator.index, class))
    }

    pub fn take_log(&self, class: usize) -> Vec<LogEntry> {
        self.shared.take_log(self.shared.slot_for(self.mutator.index, class))
    }

    pub fn stats(&self) -> HeapStats {
        self.shared.stats()
    }

    pub fn fragmentation_report(&self) -> FragmentationReport {
        self.shared.fragmentation_report()
    }

    pub fn audit(&self) -> std::result::Result<(), ContractError> {
        self.shared.audit()
    }
}

impl Deref for Heap {
    type Target = Mutator;

    fn deref(&self) -> &Mutator {
        &self.mutator
    }
}

impl DerefMut for Heap {
    fn deref_mut(&mut self) -> &mut Mutator {
        &mut self.mutator
    }
}

#[cfg(test)]
mod tests;
