//! Exact probability that a random deallocation sequence forces a
//! compaction, or drives a size-class to its worst fragmentation.

use compact_fit::automaton::AutomatonConfig;
use compact_fit::markov::{self, build_dtmc, reach_probability, Encoding, MutatorWord, Target};
use compact_fit::Limit;

fn main() -> Result<(), markov::MarkovError> {
    let cfg = AutomatonConfig::new(2, Limit::Finite(1))?;
    let model = build_dtmc(&cfg, MutatorWord::new(4, 2)?, Encoding::Positional, None)?;
    let p = reach_probability(&model, Target::Compaction)?;
    println!("h=4 pi=2 kappa=1 d=2: P(compaction) = {p} ({} states)", model.state_count());

    let (h, pi) = (40, 4);
    let ds: Vec<usize> = (0..=h).step_by(10).collect();
    let (rows, failed) =
        markov::sweep(h, pi, &[3, 6, 9], &ds, &[Target::Compaction, Target::WorstFrag], Encoding::Positional, None);
    assert!(failed.is_empty());
    println!("{}", markov::CSV_HEADER);
    for r in &rows {
        println!("{}   # ~{:.4}", r.csv(), r.approx());
    }
    Ok(())
}
