//! Run the batch benchmark in each deployment mode and lock regime.

use compact_fit::bench::{run_bench, BenchParams, SizeDistribution};
use compact_fit::concurrent::DeploymentMode;
use compact_fit::{HeapConfig, Limit, LockRegime};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dist = SizeDistribution::preset("espresso-like").expect("bundled preset");
    for locks in [LockRegime::SizeClass, LockRegime::Page] {
        for mode in [DeploymentMode::Instances, DeploymentMode::ThreadLocal, DeploymentMode::SharedGlobal] {
            let share = if mode == DeploymentMode::Instances { 0.0 } else { 0.1 };
            let params = BenchParams {
                heap: HeapConfig::new(64 << 20).kappa(Limit::Finite(2)).iota(Limit::Finite(256)).lock_regime(locks),
                mode,
                threads: 4,
                ops: 200_000,
                batch: 1024,
                share,
                dist: dist.clone(),
                seed: 7,
            };
            let r = run_bench(&params)?;
            println!(
                "{locks:>9} {mode:>9}: {:>8.0} ops/s, {} moves, {} canceled, peak {} pages, reconciled {}",
                r.ops_per_sec(),
                r.stats.moves,
                r.stats.jobs_canceled,
                r.stats.peak_pages_in_use,
                r.reconciled
            );
        }
    }
    Ok(())
}
