//! Two-level free lists.
//!
//! Every mutator owns a private list that it pushes to and pops from without
//! synchronization. Surplus elements are published as one sublist onto a
//! shared list-of-lists; a mutator whose private list runs dry adopts a
//! whole sublist at once. The shared head packs a 32-bit version next to the
//! first sublist so both change in one compare-and-swap, which rules out ABA
//! on detach.
//!
//! Elements are `u32` indices. Link words live wherever the element lives:
//! free pages keep them in their header, free handles in [`AuxNodes`].

use std::sync::atomic::{AtomicU64, Ordering};

pub const NIL: u32 = u32::MAX;

/// Storage of the link words of a set of elements.
pub trait Links {
    fn next(&self, i: u32) -> u32;
    fn set_next(&self, i: u32, next: u32);
    /// Next sublist and length of the sublist headed by `i`.
    fn sublist(&self, i: u32) -> (u32, u32);
    fn set_sublist(&self, i: u32, next: u32, len: u32);
}

fn pack(version: u32, first: u32) -> u64 {
    ((version as u64) << 32) | first as u64
}

fn unpack(word: u64) -> (u32, u32) {
    ((word >> 32) as u32, word as u32)
}

/// Shared list of sublists with a versioned head.
#[derive(Debug)]
pub struct PublicList {
    head: AtomicU64,
}

impl Default for PublicList {
    fn default() -> Self {
        PublicList::new()
    }
}

impl PublicList {
    pub fn new() -> Self {
        PublicList { head: AtomicU64::new(pack(0, NIL)) }
    }

    /// Bumped on every successful publish and detach.
    pub fn version(&self) -> u32 {
        unpack(self.head.load(Ordering::Acquire)).0
    }

    pub fn is_empty(&self) -> bool {
        unpack(self.head.load(Ordering::Acquire)).1 == NIL
    }

    /// Pushes the chain starting at `first` (linked through `next`, `len`
    /// elements) as one sublist.
    pub fn publish<L: Links + ?Sized>(&self, links: &L, first: u32, len: u32) {
        debug_assert!(first != NIL && len > 0);
        let mut cur = self.head.load(Ordering::Acquire);
        loop {
            let (version, head) = unpack(cur);
            links.set_sublist(first, head, len);
            match self.head.compare_exchange_weak(
                cur,
                pack(version.wrapping_add(1), first),
                Ordering::AcqRel,
                Ordering::Acquire,
            ) {
                Ok(_) => return,
                Err(seen) => cur = seen,
            }
        }
    }

    /// Detaches the first sublist, returning its head and length.
    pub fn detach<L: Links + ?Sized>(&self, links: &L) -> Option<(u32, u32)> {
        let mut cur = self.head.load(Ordering::Acquire);
        loop {
            let (version, head) = unpack(cur);
            if head == NIL {
                return None;
            }
            // May read a stale link if another thread detaches `head` first;
            // the version check below then fails.
            let (next, len) = links.sublist(head);
            match self.head.compare_exchange_weak(
                cur,
                pack(version.wrapping_add(1), next),
                Ordering::AcqRel,
                Ordering::Acquire,
            ) {
                Ok(_) => return Some((head, len)),
                Err(seen) => cur = seen,
            }
        }
    }

    /// Walks all sublists. Only meaningful while no other thread mutates.
    pub fn count_quiescent<L: Links + ?Sized>(&self, links: &L) -> usize {
        let (_, mut sub) = unpack(self.head.load(Ordering::Acquire));
        let mut total = 0;
        while sub != NIL {
            let (next_sub, _) = links.sublist(sub);
            let mut e = sub;
            while e != NIL {
                total += 1;
                e = links.next(e);
            }
            sub = next_sub;
        }
        total
    }
}

/// Owner-only end of a two-level free list.
#[derive(Debug, Clone, Copy)]
pub struct PrivateList {
    head: u32,
    len: u32,
}

impl Default for PrivateList {
    fn default() -> Self {
        PrivateList::new()
    }
}

impl PrivateList {
    pub const fn new() -> Self {
        PrivateList { head: NIL, len: 0 }
    }

    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn pop<L: Links + ?Sized>(&mut self, links: &L, public: &PublicList) -> Option<u32> {
        if self.head == NIL {
            let (first, len) = public.detach(links)?;
            self.head = first;
            self.len = len;
        }
        let e = self.head;
        self.head = links.next(e);
        self.len -= 1;
        Some(e)
    }

    /// Pushes `e`; once the list grows past `spill_bound` it is published
    /// as one sublist.
    pub fn push<L: Links + ?Sized>(&mut self, links: &L, public: &PublicList, spill_bound: usize, e: u32) {
        links.set_next(e, self.head);
        self.head = e;
        self.len += 1;
        if self.len as usize > spill_bound {
            self.flush(links, public);
        }
    }

    /// Publishes everything held privately.
    pub fn flush<L: Links + ?Sized>(&mut self, links: &L, public: &PublicList) {
        if self.head != NIL {
            public.publish(links, self.head, self.len);
            self.head = NIL;
            self.len = 0;
        }
    }
}

/// Two link words per element, kept outside the elements themselves.
#[derive(Debug)]
pub struct AuxNodes {
    // [next, (sublist << 32) | len] per element
    words: Box<[AtomicU64]>,
}

impl AuxNodes {
    pub fn new(count: usize) -> Self {
        assert!(count < NIL as usize, "too many elements for 32-bit links");
        AuxNodes { words: zeroed_atomics(count * 2) }
    }

    pub fn len(&self) -> usize {
        self.words.len() / 2
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

impl Links for AuxNodes {
    fn next(&self, i: u32) -> u32 {
        self.words[2 * i as usize].load(Ordering::Relaxed) as u32
    }

    fn set_next(&self, i: u32, next: u32) {
        self.words[2 * i as usize].store(next as u64, Ordering::Relaxed);
    }

    fn sublist(&self, i: u32) -> (u32, u32) {
        let w = self.words[2 * i as usize + 1].load(Ordering::Relaxed);
        ((w >> 32) as u32, w as u32)
    }

    fn set_sublist(&self, i: u32, next: u32, len: u32) {
        self.words[2 * i as usize + 1].store(((next as u64) << 32) | len as u64, Ordering::Relaxed);
    }
}

/// A zero-filled atomic table; large tables stay lazily committed.
pub fn zeroed_atomics(len: usize) -> Box<[AtomicU64]> {
    let raw = Box::into_raw(vec![0u64; len].into_boxed_slice());
    // SAFETY: AtomicU64 has the same size and alignment as u64.
    unsafe { Box::from_raw(raw as *mut [AtomicU64]) }
}

/// Links every index in `0..count` into sublists of `chunk` elements and
/// publishes them, lowest indices first out.
pub fn seed<L: Links + ?Sized>(links: &L, public: &PublicList, count: u32, chunk: usize) {
    let chunk = chunk.max(1) as u32;
    let mut starts: Vec<u32> = (0..count).step_by(chunk as usize).collect();
    starts.reverse();
    for start in starts {
        let end = (start + chunk).min(count);
        for i in start..end {
            links.set_next(i, if i + 1 < end { i + 1 } else { NIL });
        }
        public.publish(links, start, end - start);
    }
}

/// A self-contained two-level free list over `0..count`.
#[derive(Debug)]
pub struct TwoLevelFreeList {
    nodes: AuxNodes,
    public: PublicList,
    spill_bound: usize,
}

impl TwoLevelFreeList {
    pub fn new(count: usize, spill_bound: usize) -> Self {
        let nodes = AuxNodes::new(count);
        let public = PublicList::new();
        seed(&nodes, &public, count as u32, spill_bound);
        TwoLevelFreeList { nodes, public, spill_bound }
    }

    pub fn pop(&self, private: &mut PrivateList) -> Option<u32> {
        private.pop(&self.nodes, &self.public)
    }

    pub fn push(&self, private: &mut PrivateList, e: u32) {
        private.push(&self.nodes, &self.public, self.spill_bound, e);
    }

    pub fn flush(&self, private: &mut PrivateList) {
        private.flush(&self.nodes, &self.public);
    }

    pub fn public(&self) -> &PublicList {
        &self.public
    }

    pub fn public_len_quiescent(&self) -> usize {
        self.public.count_quiescent(&self.nodes)
    }
}
