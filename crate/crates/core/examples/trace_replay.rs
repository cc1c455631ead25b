//! Generate an allocation trace and replay it under several bounds.

use compact_fit::bench::{generate, replay, Dynamics, GenParams, SizeDistribution};
use compact_fit::{HeapConfig, Limit};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dist = SizeDistribution::preset("emacs-like").expect("bundled preset");
    let trace = generate(&dist, &GenParams { ops: 60_000, seed: 11, max_live: 6_000, dynamics: Dynamics::Sawtooth });
    println!("{} operations, {} live at the end", trace.ops.len(), trace.live_at_end());

    println!("kappa  peak_pages  mean_frag_bytes  moves");
    for kappa in [1, 2, 3, 5, 8] {
        let cfg = HeapConfig::new(32 << 20).kappa(Limit::Finite(kappa));
        let r = replay(&trace, cfg, 16)?;
        assert!(r.reconciled);
        println!(
            "{kappa:>5}  {:>10}  {:>15.0}  {:>5}",
            r.stats.peak_pages_in_use, r.mean_fragmentation_bytes, r.stats.moves
        );
    }
    Ok(())
}
