//! Page and size-class geometry.
//!
//! A page starts with a fixed header followed by the bitmap, rounded up to
//! 64 bytes; the rest is payload:
//!
//! | offset | field |
//! |-------:|-------|
//! | 0      | prev (u32), next (u32): class list links |
//! | 8      | used (u32): regular used blocks |
//! | 12     | owner (u32): owning class slot |
//! | 16     | state (u32) |
//! | 20     | link (u32), sublist (u32), sublen (u32): free-list links |
//! | 32     | inflight (u32): blocks being moved out |
//! | 36     | flags (u32) |
//! | 40     | bitmap, one bit per page-block, 64-bit words |
//!
//! With 16 KiB pages and a 16-byte smallest block the bitmap needs 16 words,
//! so the header occupies 192 bytes and the payload 16192 bytes.

use crate::config::{Addressing, HeapConfig, DEFAULT_MIN_BLOCK};
use crate::error::HeapError;

pub const HEADER_FIXED_BYTES: usize = 40;
pub const HEADER_ALIGN: usize = 64;
/// Bytes of the backlink word stored in front of every object in abstract mode.
pub const BACKLINK_BYTES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geometry {
    pub page_bytes: usize,
    pub pages: usize,
    pub header_bytes: usize,
    pub bitmap_words: usize,
    /// Most page-blocks any page can hold.
    pub slots_per_page: usize,
}

impl Geometry {
    pub fn new(page_bytes: usize, arena_bytes: usize, min_block: usize) -> Self {
        let max_blocks = page_bytes / min_block;
        let bitmap_words = max_blocks.div_ceil(64);
        let header_bytes = (HEADER_FIXED_BYTES + 8 * bitmap_words).next_multiple_of(HEADER_ALIGN);
        Geometry {
            page_bytes,
            pages: arena_bytes / page_bytes,
            header_bytes,
            bitmap_words,
            slots_per_page: (page_bytes - header_bytes) / min_block,
        }
    }

    pub fn payload_bytes(&self) -> usize {
        self.page_bytes - self.header_bytes
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassLayout {
    /// Page-block size.
    pub beta: usize,
    /// Page-blocks per page.
    pub pi: usize,
    /// Bytes available to the object.
    pub usable: usize,
}

/// Smallest-to-largest doubling ladder capped by a class that fills the page.
pub fn default_ladder(min_block: usize, payload: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut b = min_block;
    while b < payload {
        out.push(b);
        b *= 2;
    }
    out.push(payload / 8 * 8);
    out.dedup();
    out
}

/// Validates `cfg` and derives the page geometry and class layouts.
pub fn resolve(cfg: &HeapConfig) -> Result<(Geometry, Vec<ClassLayout>), HeapError> {
    cfg.check_modes()?;
    let page = cfg.page_bytes;
    if !page.is_power_of_two() || page < 256 {
        return Err(HeapError::Config(format!("page size {page} must be a power of two of at least 256 bytes")));
    }
    if page > 1 << 30 {
        return Err(HeapError::Config("page size too large".into()));
    }
    if cfg.arena_bytes < page {
        return Err(HeapError::Config(format!("arena of {} bytes cannot hold one {page}-byte page", cfg.arena_bytes)));
    }
    let min_allowed = match cfg.addressing {
        Addressing::Abstract => 16,
        Addressing::Direct => 8,
    };
    let min_block = cfg.class_block_sizes.first().copied().unwrap_or(DEFAULT_MIN_BLOCK);
    if min_block < min_allowed {
        return Err(HeapError::Config(format!("smallest block size must be at least {min_allowed} bytes")));
    }
    let geo = Geometry::new(page, cfg.arena_bytes, min_block);
    if geo.pages >= u32::MAX as usize || geo.pages * geo.slots_per_page >= u32::MAX as usize {
        return Err(HeapError::Config("arena has too many pages or blocks".into()));
    }
    let sizes = if cfg.class_block_sizes.is_empty() {
        default_ladder(min_block, geo.payload_bytes())
    } else {
        cfg.class_block_sizes.clone()
    };
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(HeapError::Config("block sizes must be strictly ascending".into()));
    }
    let mut layouts = Vec::with_capacity(sizes.len());
    for &beta in &sizes {
        if beta % 8 != 0 {
            return Err(HeapError::Config(format!("block size {beta} is not a multiple of 8")));
        }
        if beta > geo.payload_bytes() {
            return Err(HeapError::Config(format!(
                "block size {beta} exceeds the page payload of {} bytes",
                geo.payload_bytes()
            )));
        }
        let usable = match cfg.addressing {
            Addressing::Abstract => beta - BACKLINK_BYTES,
            Addressing::Direct => beta,
        };
        layouts.push(ClassLayout { beta, pi: geo.payload_bytes() / beta, usable });
    }
    if cfg.kappa_per_class.len() > layouts.len() {
        return Err(HeapError::Config("kappa override for a nonexistent class".into()));
    }
    Ok((geo, layouts))
}
