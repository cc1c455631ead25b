//! Incremental compaction: a free that triggers a move copies at most
//! `iota` bytes per step, and the caller drives the remaining steps.

use compact_fit::{FreeOutcome, Heap, HeapConfig, Limit, StepOutcome};

fn main() -> compact_fit::Result<()> {
    let iota = 64;
    let cfg =
        HeapConfig::new(1 << 20).page_bytes(4096).classes([512]).kappa(Limit::Finite(1)).iota(Limit::Finite(iota));
    let mut heap = Heap::new(cfg)?;

    let objs: Vec<_> = (0..24u8).map(|i| heap.alloc_bytes(&[i; 500])).collect::<compact_fit::Result<_>>()?;

    let mut moves = 0;
    for &h in objs.iter().skip(1).step_by(4) {
        if heap.free_incremental(h)? == FreeOutcome::Pending {
            let mut steps = 1;
            while heap.step() == StepOutcome::Progress {
                steps += 1;
            }
            moves += 1;
            println!("free of {h:?} moved one object in {steps} steps");
        }
    }

    let s = heap.stats();
    println!(
        "{moves} moves, {} bytes copied in {} steps, largest step {} bytes (iota {iota})",
        s.bytes_copied, s.copy_steps, s.max_step_bytes
    );
    assert!(s.max_step_bytes <= iota);

    for (i, &h) in objs.iter().enumerate().filter(|(i, _)| i % 4 != 1) {
        let mut b = [0u8; 500];
        heap.read(h, 0, &mut b)?;
        assert!(b.iter().all(|&x| x == i as u8));
    }
    heap.audit().expect("heap is consistent");
    Ok(())
}
