//! Bounded fragmentation: with kappa = 1 a size-class never keeps more
//! than one not-full page, moving objects when a free would create a second.

use compact_fit::{Heap, HeapConfig, Limit};

fn main() -> compact_fit::Result<()> {
    for kappa in [Limit::Finite(1), Limit::Finite(3), Limit::Unbounded] {
        let cfg = HeapConfig::new(1 << 20).page_bytes(1024).classes([96]).kappa(kappa);
        let mut heap = Heap::new(cfg)?;
        let objs: Vec<_> = (0..60u8)
            .map(|i| {
                let h = heap.alloc(80)?;
                heap.write(h, 0, &[i; 80])?;
                Ok(h)
            })
            .collect::<compact_fit::Result<_>>()?;

        // free every third object, scattering holes over all pages
        for &h in objs.iter().step_by(3) {
            heap.free(h)?;
        }

        for (i, &h) in objs.iter().enumerate().filter(|(i, _)| i % 3 != 0) {
            let mut b = [0u8; 80];
            heap.read(h, 0, &mut b)?;
            assert!(b.iter().all(|&x| x == i as u8));
        }

        let state = heap.project_state(0);
        let frag = heap.fragmentation_report();
        println!(
            "kappa {kappa:>3}: state {state}, {} not-full pages, {} free bytes in them, {} moves",
            state.n(),
            frag.fragmentation_bytes(),
            heap.stats().moves
        );
    }
    Ok(())
}
