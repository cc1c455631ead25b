//! Reduced-size runs of the heap and runtime checks.

mod common;

use common::criteria::{self, Outcome};

fn expect_pass(o: Outcome) {
    assert!(matches!(o, Outcome::Pass(_)), "{}: {}", o.label(), o.detail());
}

#[test]
fn projection_tracks_the_automaton() {
    expect_pass(criteria::oracle_equivalence(6_000, 11));
}

#[test]
fn bound_holds_between_operations() {
    expect_pass(criteria::kappa_bound(20_000, 12));
}

#[test]
fn contents_survive_moves_and_cancels() {
    expect_pass(criteria::content_preservation(20_000, 13));
}

#[test]
fn steps_respect_the_increment() {
    expect_pass(criteria::latency_bound(30_000, 4));
}

#[test]
fn concurrent_runs_replay_cleanly() {
    expect_pass(criteria::concurrency_soundness(60_000, 4, 14));
}

#[test]
fn fragmentation_grows_with_kappa() {
    expect_pass(criteria::fragmentation_trend(50_000, 15));
}
