use super::*;
use crate::automaton::{replay, IncrementalAutomaton};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// 1 KiB pages with a 96-byte smallest block: 64-byte header, 960-byte
// payload, so the three classes hold 10, 3 and 2 blocks per page.
fn small(kappa: Limit, iota: Limit) -> HeapConfig {
    HeapConfig::new(256 * 1024).page_bytes(1024).classes([96, 320, 480]).kappa(kappa).iota(iota).record_logs(true)
}

fn model(heap: &Heap, class: usize) -> IncrementalAutomaton {
    let l = heap.shared().layouts()[class];
    let cfg = heap.shared().config();
    IncrementalAutomaton { pi: l.pi, kappa: cfg.kappa_of(class), beta: l.beta, iota: cfg.iota }
}

fn churn(heap: &mut Heap, seed: u64, ops: usize, cap: usize) -> Vec<(Handle, usize, u8)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut live: Vec<(Handle, usize, u8)> = Vec::new();
    for i in 0..ops {
        if live.len() < cap && (live.is_empty() || rng.gen_bool(0.55)) {
            let class = rng.gen_range(0..heap.shared().layouts().len());
            let h = heap.alloc_class(class).unwrap();
            let tag = (i % 251) as u8;
            let usable = heap.usable_size(h).unwrap();
            heap.write(h, 0, &vec![tag; usable]).unwrap();
            live.push((h, class, tag));
        } else {
            let (h, _, tag) = live.swap_remove(rng.gen_range(0..live.len()));
            let mut b = vec![0u8; heap.usable_size(h).unwrap()];
            heap.read(h, 0, &mut b).unwrap();
            assert!(b.iter().all(|&x| x == tag), "object contents changed");
            heap.free(h).unwrap();
        }
    }
    live
}

#[test]
fn layout_of_test_geometry() {
    let heap = Heap::new(small(Limit::Finite(1), Limit::Unbounded)).unwrap();
    let pis: Vec<usize> = heap.shared().layouts().iter().map(|l| l.pi).collect();
    assert_eq!(pis, [10, 3, 2]);
    assert_eq!(heap.shared().geometry().header_bytes, 64);
}

#[test]
fn alloc_write_read_free() {
    let mut heap = Heap::new(HeapConfig::new(1 << 20)).unwrap();
    let h = heap.alloc(20).unwrap();
    assert_eq!(heap.usable_size(h).unwrap(), 24);
    heap.write(h, 4, b"hello").unwrap();
    let mut b = [0u8; 5];
    heap.read(h, 4, &mut b).unwrap();
    assert_eq!(&b, b"hello");
    assert!(matches!(heap.write(h, 20, b"hello"), Err(HeapError::OutOfBounds { .. })));
    heap.free(h).unwrap();
    assert!(matches!(heap.free(h), Err(HeapError::DoubleFree(_))));
    assert!(matches!(heap.read(Handle::from_raw(1 << 40), 0, &mut b), Err(HeapError::InvalidHandle(_))));
    assert!(matches!(heap.alloc(1 << 20), Err(HeapError::UnsupportedSize { .. })));
    heap.audit().unwrap();
}

#[test]
fn out_of_memory_is_reported() {
    let mut heap = Heap::new(small(Limit::Finite(1), Limit::Unbounded)).unwrap();
    let pages = heap.shared().geometry().pages;
    for _ in 0..pages * 2 {
        heap.alloc_class(2).unwrap();
    }
    assert!(matches!(heap.alloc_class(2), Err(HeapError::OutOfMemory { class: 2 })));
    heap.audit().unwrap();
}

#[test]
fn classic_mode_matches_the_automaton() {
    for kappa in [1, 2, 4] {
        let mut heap = Heap::new(small(Limit::Finite(kappa), Limit::Unbounded)).unwrap();
        churn(&mut heap, 7 + kappa as u64, 6000, 400);
        heap.audit().unwrap();
        for class in 0..3 {
            let log = heap.take_log(class);
            assert!(log.len() > 500);
            replay(&model(&heap, class), &log).unwrap();
        }
        assert_eq!(heap.stats().kappa_violations, 0);
    }
}

#[test]
fn compaction_keeps_contents_and_bound() {
    let mut heap = Heap::new(small(Limit::Finite(1), Limit::Unbounded)).unwrap();
    let hs: Vec<Handle> = (0..40).map(|_| heap.alloc_class(0).unwrap()).collect();
    for (i, &h) in hs.iter().enumerate() {
        heap.write(h, 0, &[i as u8; 88]).unwrap();
    }
    for &h in hs.iter().step_by(3) {
        heap.free(h).unwrap();
        assert!(heap.project_state(0).n() <= 1);
    }
    for (i, &h) in hs.iter().enumerate().filter(|(i, _)| i % 3 != 0) {
        let mut b = [0u8; 88];
        heap.read(h, 0, &mut b).unwrap();
        assert!(b.iter().all(|&x| x == i as u8));
    }
    assert!(heap.stats().moves > 0);
    heap.audit().unwrap();
}

#[test]
fn incremental_mode_matches_the_model() {
    for (kappa, iota) in [(1, 16), (2, 40), (1, 96), (3, 8)] {
        let mut heap = Heap::new(small(Limit::Finite(kappa), Limit::Finite(iota))).unwrap();
        churn(&mut heap, 99 + iota as u64, 5000, 300);
        heap.audit().unwrap();
        let stats = heap.stats();
        assert!(stats.max_step_bytes <= iota);
        assert_eq!(stats.kappa_violations, 0);
        for class in 0..3 {
            let log = heap.take_log(class);
            replay(&model(&heap, class), &log).unwrap_or_else(|e| panic!("kappa {kappa} iota {iota}: {e}"));
        }
    }
}

#[test]
fn interleaved_moves_cancel_and_conflict() {
    let cfg = small(Limit::Finite(1), Limit::Finite(8)).max_mutators(8).spill_bound(4);
    let shared = SharedHeap::new(cfg).unwrap();
    let mut ms: Vec<Mutator> = (0..8).map(|_| shared.mutator().unwrap()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut live: Vec<(Handle, u8)> = Vec::new();
    for i in 0..20_000 {
        let m = rng.gen_range(0..ms.len());
        if ms[m].has_pending() && rng.gen_bool(0.15) {
            ms[m].step();
            continue;
        }
        if ms[m].has_pending() {
            continue;
        }
        if live.len() < 200 && (live.is_empty() || rng.gen_bool(0.5)) {
            let h = ms[m].alloc_class(0).unwrap();
            let tag = (i % 200) as u8;
            ms[m].write(h, 0, &[tag; 88]).unwrap();
            live.push((h, tag));
        } else {
            let (h, tag) = live.swap_remove(rng.gen_range(0..live.len()));
            let mut b = [0u8; 88];
            ms[m].read(h, 0, &mut b).unwrap();
            assert!(b.iter().all(|&x| x == tag));
            ms[m].free_incremental(h).unwrap();
        }
    }
    for m in &mut ms {
        m.drive_to_completion();
    }
    shared.audit().unwrap();
    let s = shared.stats();
    assert!(s.jobs_canceled > 0, "{s:?}");
    assert!(s.conflicts > 0, "{s:?}");
    assert!(s.peak_active_jobs > 1);
    assert_eq!(s.active_jobs, 0);
    assert_eq!(s.transient_pages, 0);
    assert_eq!(s.kappa_violations, 0);
    replay(
        &IncrementalAutomaton { pi: 10, kappa: Limit::Finite(1), beta: 96, iota: Limit::Finite(8) },
        &shared.take_log(0),
    )
    .unwrap();
}

#[test]
fn writes_reach_both_copies_while_in_flight() {
    let cfg = small(Limit::Finite(1), Limit::Finite(8)).max_mutators(4);
    let shared = SharedHeap::new(cfg).unwrap();
    let mut a = shared.mutator().unwrap();
    let b = shared.mutator().unwrap();
    let hs: Vec<Handle> = (0..30).map(|_| a.alloc_class(0).unwrap()).collect();
    for &h in &hs {
        a.write(h, 0, &[1; 88]).unwrap();
    }
    // free until a move is left half done
    let mut i = 0;
    while !a.has_pending() {
        a.free_incremental(hs[i]).unwrap();
        i += 3;
    }
    a.step();
    for &h in hs.iter().enumerate().filter(|(j, _)| j % 3 != 0).map(|(_, h)| h) {
        b.write(h, 0, &[2; 88]).unwrap();
    }
    a.drive_to_completion();
    for &h in hs.iter().enumerate().filter(|(j, _)| j % 3 != 0 && *j < i).map(|(_, h)| h) {
        let mut buf = [0u8; 88];
        b.read(h, 0, &mut buf).unwrap();
        assert_eq!(buf, [2; 88]);
    }
}

#[test]
fn direct_mode_never_moves() {
    let cfg = HeapConfig::new(256 * 1024).page_bytes(1024).classes([8, 64]).direct().record_logs(true);
    let mut heap = Heap::new(cfg).unwrap();
    let hs: Vec<Handle> = (0..200).map(|_| heap.alloc_class(0).unwrap()).collect();
    let addrs: Vec<usize> = hs.iter().map(|&h| heap.address(h).unwrap()).collect();
    for &h in hs.iter().step_by(2) {
        heap.free(h).unwrap();
    }
    for (k, &h) in hs.iter().enumerate().skip(1).step_by(2) {
        assert_eq!(heap.address(h).unwrap(), addrs[k]);
    }
    assert_eq!(heap.stats().moves, 0);
    assert!(matches!(heap.free(hs[0]), Err(HeapError::DoubleFree(_))));
    heap.audit().unwrap();
    replay(
        &IncrementalAutomaton { pi: 120, kappa: Limit::Unbounded, beta: 8, iota: Limit::Unbounded },
        &heap.take_log(0),
    )
    .unwrap();
}

#[test]
fn thread_local_classes_route_frees_to_the_owner() {
    let cfg = small(Limit::Finite(1), Limit::Unbounded).class_scope(ClassScope::ThreadLocal).max_mutators(2);
    let shared = SharedHeap::new(cfg).unwrap();
    let mut a = shared.mutator().unwrap();
    let mut b = shared.mutator().unwrap();
    let hs: Vec<Handle> = (0..25).map(|_| a.alloc_class(0).unwrap()).collect();
    for &h in &hs[..10] {
        b.free(h).unwrap();
    }
    assert_eq!(shared.project_state(shared.slot_for(a.index(), 0)).h, 15);
    assert_eq!(shared.project_state(shared.slot_for(b.index(), 0)).h, 0);
    shared.audit().unwrap();
    drop(a);
    assert!(matches!(shared.mutator().unwrap().index(), 0 | 1));
}

#[test]
fn too_many_mutators() {
    let shared = SharedHeap::new(HeapConfig::new(1 << 20).max_mutators(2)).unwrap();
    let _a = shared.mutator().unwrap();
    let _b = shared.mutator().unwrap();
    assert!(matches!(shared.mutator(), Err(HeapError::TooManyMutators(2))));
}
