#![allow(dead_code)]

pub mod criteria;
pub mod sim;

use compact_fit::automaton::IncrementalAutomaton;
use compact_fit::{HeapConfig, Limit, SharedHeap};

/// 1 KiB pages, 64-byte page header: classes of 96, 320 and 480 bytes hold
/// 10, 3 and 2 blocks per page.
pub fn small(kappa: Limit, iota: Limit) -> HeapConfig {
    HeapConfig::new(1 << 20).page_bytes(1024).classes([96, 320, 480]).kappa(kappa).iota(iota).record_logs(true)
}

pub const SMALL_PIS: [usize; 3] = [10, 3, 2];

pub fn model(heap: &SharedHeap, slot: usize) -> IncrementalAutomaton {
    let class = slot % heap.layouts().len();
    let l = heap.layouts()[class];
    let cfg = heap.config();
    IncrementalAutomaton { pi: l.pi, kappa: cfg.kappa, beta: l.beta, iota: cfg.iota }
}

/// Deterministic contents of object `id`.
pub fn payload(id: u64, len: usize) -> Vec<u8> {
    let mut x = id.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    (0..len)
        .map(|_| {
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
            x as u8
        })
        .collect()
}

pub fn checksum(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

pub fn cores() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}
