//! Several threads on one heap: thread-local size-classes, objects handed
//! across threads and freed by the receiver.

use std::sync::mpsc;

use compact_fit::concurrent::{Deployment, DeploymentMode};
use compact_fit::{Handle, HeapConfig, Limit, LockRegime};

fn main() -> compact_fit::Result<()> {
    let threads = 4;
    let cfg = HeapConfig::new(64 << 20).kappa(Limit::Finite(2)).iota(Limit::Finite(256)).lock_regime(LockRegime::Page);
    let dep = Deployment::new(DeploymentMode::ThreadLocal, cfg, threads)?;

    let (txs, rxs): (Vec<_>, Vec<_>) = (0..threads).map(|_| mpsc::channel::<Handle>()).unzip();
    std::thread::scope(|s| {
        for (t, rx) in rxs.into_iter().enumerate() {
            let dep = &dep;
            let next = txs[(t + 1) % threads].clone();
            s.spawn(move || {
                let mut m = dep.mutator(t).expect("mutator slot");
                for round in 0..50 {
                    let batch: Vec<Handle> =
                        (0..256).map(|i| m.alloc(16 + (i * 37 + round) % 700).expect("memory")).collect();
                    for (i, h) in batch.into_iter().enumerate() {
                        if i % 4 == 0 {
                            next.send(h).expect("neighbor alive");
                        } else {
                            m.free(h).expect("live handle");
                        }
                    }
                    while let Ok(h) = rx.try_recv() {
                        m.free(h).expect("handed-over handle");
                    }
                }
                drop(next);
                for h in rx {
                    m.free(h).expect("handed-over handle");
                }
            });
        }
        drop(txs);
    });

    let heap = &dep.heaps()[0];
    let s = heap.stats();
    println!(
        "allocs {} frees {} moves {} canceled {} peak pages {}",
        s.allocs, s.frees, s.moves, s.jobs_canceled, s.peak_pages_in_use
    );
    assert_eq!(s.allocs, s.frees);
    heap.audit().expect("heap is consistent");
    Ok(())
}
