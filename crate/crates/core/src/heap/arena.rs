//! The managed memory region and in-page headers.

use std::alloc::{alloc_zeroed, dealloc, Layout};
use std::ptr::NonNull;
use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};

use super::layout::{Geometry, HEADER_FIXED_BYTES};
use crate::concurrent::freelist::{Links, NIL};
use crate::error::HeapError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum PageState {
    Free = 0,
    NotFull = 1,
    Full = 2,
    Source = 3,
    Emptying = 4,
}

impl PageState {
    fn from_u32(v: u32) -> PageState {
        match v {
            0 => PageState::Free,
            1 => PageState::NotFull,
            2 => PageState::Full,
            3 => PageState::Source,
            4 => PageState::Emptying,
            _ => unreachable!("corrupt page state {v}"),
        }
    }
}

/// Set while the page counts as transient fragmentation.
pub const FLAG_TRANSIENT: u32 = 1;

#[repr(C)]
pub struct PageHeader {
    pub prev: AtomicU32,
    pub next: AtomicU32,
    pub used: AtomicU32,
    pub owner: AtomicU32,
    state: AtomicU32,
    pub link: AtomicU32,
    pub sublist: AtomicU32,
    pub sublen: AtomicU32,
    pub inflight: AtomicU32,
    pub flags: AtomicU32,
}

const _: () = assert!(std::mem::size_of::<PageHeader>() == HEADER_FIXED_BYTES);

impl PageHeader {
    pub fn state(&self) -> PageState {
        PageState::from_u32(self.state.load(Ordering::Acquire))
    }

    pub fn set_state(&self, s: PageState) {
        self.state.store(s as u32, Ordering::Release);
    }

    pub fn used(&self) -> usize {
        self.used.load(Ordering::Relaxed) as usize
    }

    pub fn inflight(&self) -> usize {
        self.inflight.load(Ordering::Relaxed) as usize
    }

    pub fn owner(&self) -> u32 {
        self.owner.load(Ordering::Acquire)
    }
}

pub struct Arena {
    base: NonNull<u8>,
    layout: Layout,
    geo: Geometry,
}

// The arena hands out raw memory; callers serialize payload access through
// page locks, and headers and bitmaps are atomics.
unsafe impl Send for Arena {}
unsafe impl Sync for Arena {}

impl Arena {
    pub fn new(geo: Geometry) -> Result<Self, HeapError> {
        let bytes = geo.pages * geo.page_bytes;
        let layout = Layout::from_size_align(bytes, geo.page_bytes)
            .map_err(|e| HeapError::Config(format!("arena layout: {e}")))?;
        // SAFETY: layout has non-zero size (at least one page).
        let ptr = unsafe { alloc_zeroed(layout) };
        let base =
            NonNull::new(ptr).ok_or_else(|| HeapError::Config(format!("cannot reserve {bytes} bytes of arena")))?;
        let arena = Arena { base, layout, geo };
        for p in 0..geo.pages as u32 {
            let h = arena.header(p);
            h.prev.store(NIL, Ordering::Relaxed);
            h.next.store(NIL, Ordering::Relaxed);
            h.owner.store(NIL, Ordering::Relaxed);
            h.link.store(NIL, Ordering::Relaxed);
            h.sublist.store(NIL, Ordering::Relaxed);
        }
        Ok(arena)
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geo
    }

    pub fn base_addr(&self) -> usize {
        self.base.as_ptr() as usize
    }

    pub fn header(&self, page: u32) -> &PageHeader {
        debug_assert!((page as usize) < self.geo.pages);
        // SAFETY: the page lies inside the allocation, page starts are
        // page-aligned, and all-zero bytes are valid atomics.
        unsafe { &*(self.base.as_ptr().add(page as usize * self.geo.page_bytes) as *const PageHeader) }
    }

    pub fn bitmap(&self, page: u32) -> &[AtomicU64] {
        // SAFETY: the bitmap follows the fixed header inside the header area.
        unsafe {
            let p =
                self.base.as_ptr().add(page as usize * self.geo.page_bytes + HEADER_FIXED_BYTES) as *const AtomicU64;
            std::slice::from_raw_parts(p, self.geo.bitmap_words)
        }
    }

    pub fn bit(&self, page: u32, block: u32) -> bool {
        let w = &self.bitmap(page)[block as usize / 64];
        w.load(Ordering::Acquire) & (1u64 << (block % 64)) != 0
    }

    pub fn set_bit(&self, page: u32, block: u32) {
        let prev = self.bitmap(page)[block as usize / 64].fetch_or(1u64 << (block % 64), Ordering::AcqRel);
        debug_assert!(prev & (1u64 << (block % 64)) == 0, "block already used");
    }

    pub fn clear_bit(&self, page: u32, block: u32) {
        let prev = self.bitmap(page)[block as usize / 64].fetch_and(!(1u64 << (block % 64)), Ordering::AcqRel);
        debug_assert!(prev & (1u64 << (block % 64)) != 0, "block already free");
    }

    /// Lowest free block below `pi`.
    pub fn first_free(&self, page: u32, pi: usize) -> Option<u32> {
        for (wi, w) in self.bitmap(page).iter().enumerate() {
            let base = wi * 64;
            if base >= pi {
                break;
            }
            let free = !w.load(Ordering::Acquire);
            if free != 0 {
                let b = base + free.trailing_zeros() as usize;
                return (b < pi).then_some(b as u32);
            }
        }
        None
    }

    /// Highest used block accepted by `accept`.
    pub fn last_used(&self, page: u32, pi: usize, mut accept: impl FnMut(u32) -> bool) -> Option<u32> {
        let words = self.bitmap(page);
        let last_word = (pi - 1) / 64;
        for wi in (0..=last_word).rev() {
            let mut bits = words[wi].load(Ordering::Acquire);
            while bits != 0 {
                let top = 63 - bits.leading_zeros();
                let b = (wi * 64) as u32 + top;
                if (b as usize) < pi && accept(b) {
                    return Some(b);
                }
                bits &= !(1u64 << top);
            }
        }
        None
    }

    pub fn popcount(&self, page: u32) -> usize {
        self.bitmap(page).iter().map(|w| w.load(Ordering::Acquire).count_ones() as usize).sum()
    }

    pub fn block_offset(&self, page: u32, block: u32, beta: usize) -> usize {
        page as usize * self.geo.page_bytes + self.geo.header_bytes + block as usize * beta
    }

    /// Splits an arena offset into page and byte offset within the payload.
    pub fn locate(&self, offset: usize) -> Option<(u32, usize)> {
        let page = offset / self.geo.page_bytes;
        let within = offset % self.geo.page_bytes;
        if page >= self.geo.pages || within < self.geo.header_bytes {
            return None;
        }
        Some((page as u32, within - self.geo.header_bytes))
    }

    /// # Safety
    /// `offset..offset + len` must lie inside the arena and the caller must
    /// hold the page lock covering it.
    pub unsafe fn read(&self, offset: usize, dst: &mut [u8]) {
        std::ptr::copy_nonoverlapping(self.base.as_ptr().add(offset), dst.as_mut_ptr(), dst.len());
    }

    /// # Safety
    /// Same as [`Arena::read`].
    pub unsafe fn write(&self, offset: usize, src: &[u8]) {
        std::ptr::copy_nonoverlapping(src.as_ptr(), self.base.as_ptr().add(offset), src.len());
    }

    /// # Safety
    /// Same as [`Arena::read`] for both ranges; ranges must not overlap.
    pub unsafe fn copy(&self, from: usize, to: usize, len: usize) {
        let p = self.base.as_ptr();
        std::ptr::copy_nonoverlapping(p.add(from), p.add(to), len);
    }

    /// # Safety
    /// Same as [`Arena::read`].
    pub unsafe fn fill(&self, offset: usize, len: usize, byte: u8) {
        std::ptr::write_bytes(self.base.as_ptr().add(offset), byte, len);
    }

    /// # Safety
    /// Same as [`Arena::read`].
    pub unsafe fn read_u64(&self, offset: usize) -> u64 {
        let mut b = [0u8; 8];
        self.read(offset, &mut b);
        u64::from_le_bytes(b)
    }

    /// # Safety
    /// Same as [`Arena::read`].
    pub unsafe fn write_u64(&self, offset: usize, v: u64) {
        self.write(offset, &v.to_le_bytes());
    }
}

impl Drop for Arena {
    fn drop(&mut self) {
        // SAFETY: allocated in `new` with the same layout.
        unsafe { dealloc(self.base.as_ptr(), self.layout) }
    }
}

/// Free-page links stored in page headers.
pub struct PageLinks<'a>(pub &'a Arena);

impl Links for PageLinks<'_> {
    fn next(&self, i: u32) -> u32 {
        self.0.header(i).link.load(Ordering::Relaxed)
    }

    fn set_next(&self, i: u32, next: u32) {
        self.0.header(i).link.store(next, Ordering::Relaxed);
    }

    fn sublist(&self, i: u32) -> (u32, u32) {
        let h = self.0.header(i);
        (h.sublist.load(Ordering::Relaxed), h.sublen.load(Ordering::Relaxed))
    }

    fn set_sublist(&self, i: u32, next: u32, len: u32) {
        let h = self.0.header(i);
        h.sublist.store(next, Ordering::Relaxed);
        h.sublen.store(len, Ordering::Relaxed);
    }
}
