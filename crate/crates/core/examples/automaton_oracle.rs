//! The abstract size-class automaton, stepped by hand and used to check a
//! heap's recorded transitions.

use compact_fit::automaton::{self, replay, AutomatonConfig, AutomatonState, IncrementalAutomaton, PageSelector};
use compact_fit::{Heap, HeapConfig, Limit};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = AutomatonConfig::new(3, Limit::Finite(1))?;
    let mut s = AutomatonState::empty();
    for _ in 0..7 {
        s = automaton::step_alloc(&s, &cfg)?;
    }
    println!("after 7 allocations: {s}");
    s = automaton::step_dealloc(&s, &cfg, PageSelector::Full)?;
    println!("free in a full page: {s} ({:?})", automaton::classify(&s, &cfg)?);
    if automaton::classify(&s, &cfg)? == automaton::StateClass::Compaction {
        s = automaton::step_compact(&s, &cfg)?;
        println!("after compaction: {s}");
    }

    let heap_cfg = HeapConfig::new(1 << 20).page_bytes(1024).classes([320]).kappa(Limit::Finite(1)).record_logs(true);
    let mut heap = Heap::new(heap_cfg)?;
    let hs: Vec<_> = (0..7).map(|_| heap.alloc(300)).collect::<Result<_, _>>()?;
    heap.free(hs[1])?;
    heap.free(hs[5])?;
    let layout = heap.shared().layouts()[0];
    let model =
        IncrementalAutomaton { pi: layout.pi, kappa: Limit::Finite(1), beta: layout.beta, iota: Limit::Unbounded };
    let log = heap.take_log(0);
    let checked = replay(&model, &log)?;
    println!("heap state {}, {checked} logged transitions replayed", heap.project_state(0));
    Ok(())
}
