//! Checks behind the acceptance run. Each returns an [`Outcome`] with a
//! one-line summary of what was measured.

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, AtomicI64, AtomicUsize, Ordering};
use std::time::Instant;

use compact_fit::automaton::{
    replay_from, step_alloc, step_compact, step_dealloc, AutomatonConfig, AutomatonState, ClassEvent, IncrementalState,
    PageSelector,
};
use compact_fit::bench::{self, generate, BenchParams, Dynamics, GenParams, SizeDistribution, TraceOp};
use compact_fit::concurrent::freelist::{PrivateList, TwoLevelFreeList};
use compact_fit::concurrent::{Deployment, DeploymentMode};
use compact_fit::markov::{self, build_dtmc, reach_probability, Encoding, MutatorWord, Target};
use compact_fit::{FreeOutcome, Handle, Heap, HeapConfig, Limit, LockRegime, SharedHeap};
use num_rational::BigRational;
use parking_lot::Mutex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::sim::{estimate, Goal};
use super::{checksum, model, payload, small, SMALL_PIS};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Pass(String),
    /// The measured value differs from the reference figure and the difference
    /// is documented in the repository, which the criterion accepts.
    Deviation(String),
    Skip(String),
    Fail(String),
}

impl Outcome {
    pub fn label(&self) -> &'static str {
        match self {
            Outcome::Pass(_) => "PASS",
            Outcome::Deviation(_) => "PASS (documented deviation)",
            Outcome::Skip(_) => "SKIP",
            Outcome::Fail(_) => "FAIL",
        }
    }

    pub fn detail(&self) -> &str {
        match self {
            Outcome::Pass(s) | Outcome::Deviation(s) | Outcome::Skip(s) | Outcome::Fail(s) => s,
        }
    }

    pub fn is_fail(&self) -> bool {
        matches!(self, Outcome::Fail(_))
    }
}

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Outcome::Fail(format!($($msg)+));
        }
    };
}

macro_rules! tryo {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(e) => return Outcome::Fail(format!("{}: {e}", stringify!($e))),
        }
    };
}

fn occupancy(heap: &Heap, live: &[Handle]) -> HashMap<u32, usize> {
    let mut m = HashMap::new();
    for &h in live {
        *m.entry(heap.dereference(h).expect("live handle").page).or_insert(0) += 1;
    }
    m
}

/// Projection of the heap equals the automaton after every operation, for
/// every kappa in {1, 2, 4, inf} and pi in {10, 3, 2}.
pub fn oracle_equivalence(ops: usize, seed: u64) -> Outcome {
    let mut total = 0;
    let mut compactions = 0;
    for kappa in [Limit::Finite(1), Limit::Finite(2), Limit::Finite(4), Limit::Unbounded] {
        let mut heap = tryo!(Heap::new(small(kappa, Limit::Unbounded)));
        for (class, &pi) in SMALL_PIS.iter().enumerate() {
            let cfg = tryo!(AutomatonConfig::new(pi, kappa));
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (class as u64) << 8);
            let mut s = AutomatonState::empty();
            let mut live: Vec<Handle> = Vec::new();
            let mut occ: HashMap<u32, usize> = HashMap::new();
            for i in 0..ops {
                let grow = (i / 2500) % 2 == 0;
                let p_alloc = if grow { 0.65 } else { 0.35 };
                if live.is_empty() || (live.len() < 400 && rng.gen_bool(p_alloc)) {
                    let h = tryo!(heap.alloc_class(class));
                    live.push(h);
                    *occ.entry(tryo!(heap.dereference(h)).page).or_insert(0) += 1;
                    s = tryo!(step_alloc(&s, &cfg));
                    let log = heap.take_log(class);
                    ensure!(
                        log.len() == 1 && log[0].events == [ClassEvent::Alloc],
                        "allocation logged as {:?}",
                        log.iter().map(|e| &e.events).collect::<Vec<_>>()
                    );
                } else {
                    let h = live.swap_remove(rng.gen_range(0..live.len()));
                    let page = tryo!(heap.dereference(h)).page;
                    let on_page = occ[&page];
                    tryo!(heap.free(h));
                    *occ.get_mut(&page).unwrap() -= 1;
                    let log = heap.take_log(class);
                    ensure!(log.len() == 1, "one free produced {} units", log.len());
                    for ev in &log[0].events {
                        match *ev {
                            ClassEvent::Dealloc(sel) => {
                                let ok = match sel {
                                    PageSelector::Full => on_page == pi,
                                    PageSelector::NotFull(k) => s.u.get(k) == Some(&on_page),
                                    PageSelector::Source => false,
                                };
                                ensure!(ok, "{s}: free on a page holding {on_page} objects logged as {sel:?}");
                                s = tryo!(step_dealloc(&s, &cfg, sel));
                            }
                            ClassEvent::Compact => {
                                s = tryo!(step_compact(&s, &cfg));
                                compactions += 1;
                                occ = occupancy(&heap, &live);
                            }
                            ref other => return Outcome::Fail(format!("unexpected event {other:?}")),
                        }
                    }
                }
                let projected = heap.project_state(class);
                ensure!(projected == s, "kappa {kappa} pi {pi} op {i}: heap {projected} vs automaton {s}");
                total += 1;
            }
        }
        tryo!(heap.audit());
    }
    Outcome::Pass(format!(
        "{total} operations over 12 (kappa, pi) pairs, {compactions} compactions, projection equal after each"
    ))
}

/// Not-full pages never exceed kappa at an operation boundary.
pub fn kappa_bound(ops_per_config: usize, seed: u64) -> Outcome {
    let dist = SizeDistribution::preset("hummingbird-like").unwrap();
    let mut checked = 0u64;
    let mut moves = 0;
    for (kappa, iota) in [(1, Limit::Unbounded), (2, Limit::Finite(64)), (4, Limit::Finite(16))] {
        let cfg = HeapConfig::new(64 << 20).page_bytes(16 * 1024).kappa(Limit::Finite(kappa)).iota(iota);
        let mut heap = tryo!(Heap::new(cfg));
        let max = heap.shared().layouts().last().unwrap().usable;
        let dist = dist.clamp_to(max).unwrap();
        let trace = generate(
            &dist,
            &GenParams { ops: ops_per_config, seed: seed + kappa as u64, max_live: 3000, dynamics: Dynamics::Sawtooth },
        );
        let mut ids: HashMap<u64, Handle> = HashMap::new();
        for op in &trace.ops {
            let class = match *op {
                TraceOp::Alloc { id, size } => {
                    let h = tryo!(heap.alloc(size));
                    ids.insert(id, h);
                    tryo!(heap.dereference(h)).slot
                }
                TraceOp::Free { id } => {
                    let h = ids.remove(&id).unwrap();
                    let slot = tryo!(heap.dereference(h)).slot;
                    tryo!(heap.free(h));
                    slot
                }
            };
            let n = heap.project_state(class).n();
            ensure!(n <= kappa, "class {class} has {n} not-full pages with kappa {kappa}");
            checked += 1;
        }
        let s = heap.stats();
        ensure!(s.kappa_violations == 0, "{} unit-level violations", s.kappa_violations);
        moves += s.moves;
        tryo!(heap.audit());
    }
    Outcome::Pass(format!("{checked} operation boundaries checked, {moves} moves, 0 violations"))
}

struct Obj {
    h: Handle,
    id: u64,
    len: usize,
    sum: u64,
}

fn verify(m: &compact_fit::Mutator, o: &Obj) -> Result<(), String> {
    let mut b = vec![0u8; o.len];
    m.read(o.h, 0, &mut b).map_err(|e| e.to_string())?;
    if checksum(&b) != o.sum {
        return Err(format!("object {} changed its contents", o.id));
    }
    Ok(())
}

/// Checksummed objects survive forced and incremental compaction, including
/// moves that are canceled half way.
pub fn content_preservation(ops: usize, seed: u64) -> Outcome {
    let mut summary = Vec::new();
    for iota in [Limit::Unbounded, Limit::Finite(16), Limit::Finite(64), Limit::Finite(256)] {
        let cfg = small(Limit::Finite(1), iota).record_logs(false).spill_bound(4);
        let shared = tryo!(SharedHeap::new(cfg));
        let mut ms: Vec<_> = (0..4).map(|_| shared.mutator().unwrap()).collect();
        let usable: Vec<usize> = shared.layouts().iter().map(|l| l.usable).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut live: Vec<Obj> = Vec::new();
        let mut next_id = 0u64;
        for i in 0..ops {
            let k = rng.gen_range(0..ms.len());
            if ms[k].has_pending() && rng.gen_bool(0.6) {
                ms[k].step();
                continue;
            }
            if ms[k].has_pending() {
                ms[k].drive_to_completion();
            }
            let m = &mut ms[k];
            let r: f64 = rng.gen();
            if live.is_empty() || (live.len() < 300 && r < 0.5) {
                let class = rng.gen_range(0..usable.len());
                let len = rng.gen_range(1..=usable[class]);
                let data = payload(next_id, len);
                let h = tryo!(m.alloc_bytes(&data));
                live.push(Obj { h, id: next_id, len, sum: checksum(&data) });
                next_id += 1;
            } else if r < 0.9 {
                let o = live.swap_remove(rng.gen_range(0..live.len()));
                if let Err(e) = verify(m, &o) {
                    return Outcome::Fail(e);
                }
                tryo!(m.free_incremental(o.h));
            } else {
                let o = &live[rng.gen_range(0..live.len())];
                if let Err(e) = verify(m, o) {
                    return Outcome::Fail(format!("op {i}: {e}"));
                }
            }
            if i % 10_000 == 0 {
                tryo!(shared.audit());
            }
        }
        for m in &mut ms {
            m.drive_to_completion();
        }
        for o in &live {
            if let Err(e) = verify(&ms[0], o) {
                return Outcome::Fail(e);
            }
        }
        tryo!(shared.audit());
        let s = shared.stats();
        ensure!(s.moves > 0, "iota {iota}: no object was moved");
        if iota.is_finite() {
            ensure!(s.jobs_canceled > 0, "iota {iota}: no move was canceled");
        }
        summary.push(format!("iota {iota}: {} moves, {} canceled", s.moves, s.jobs_canceled));
    }
    Outcome::Pass(format!("{ops} ops per setting, all live objects intact; {}", summary.join("; ")))
}

pub const REFERENCE_STATES: usize = 1_429_506;
pub const REFERENCE_TRANSITIONS: usize = 2_818_395;

/// Model size of `A^80 D^80` with pi 10 and kappa 5 under both encodings.
pub fn state_count(doc: &std::path::Path) -> Outcome {
    let cfg = AutomatonConfig::new(10, Limit::Finite(5)).unwrap();
    let word = MutatorWord::new(80, 80).unwrap();
    let t0 = Instant::now();
    let mut seen = Vec::new();
    for enc in [Encoding::Sorted, Encoding::Positional] {
        let (s, t) = tryo!(markov::count(&cfg, word, enc));
        if (s, t) == (REFERENCE_STATES, REFERENCE_TRANSITIONS) {
            return Outcome::Pass(format!("{enc} encoding: {s} states, {t} transitions"));
        }
        seen.push((enc, s, t));
    }
    let secs = t0.elapsed().as_secs_f64();
    let measured = seen.iter().map(|(e, s, t)| format!("{e} {s}/{t}")).collect::<Vec<_>>().join(", ");
    let text = std::fs::read_to_string(doc).unwrap_or_default();
    let documented = seen.iter().all(|(_, s, t)| text.contains(&s.to_string()) && text.contains(&t.to_string()));
    if documented {
        Outcome::Deviation(format!(
            "measured {measured} in {secs:.1} s; reference 1429506/2818395; see {}",
            doc.display()
        ))
    } else {
        Outcome::Fail(format!("measured {measured}; neither matches and {} does not record both", doc.display()))
    }
}

/// The hand-derived 2/3, then Monte Carlo agreement on a grid.
pub fn small_probabilities(trials: usize, points: usize, seed: u64) -> Outcome {
    let cfg = AutomatonConfig::new(2, Limit::Finite(1)).unwrap();
    let model = tryo!(build_dtmc(&cfg, MutatorWord::new(4, 2).unwrap(), Encoding::Positional, None));
    let p = tryo!(reach_probability(&model, Target::Compaction));
    let two_thirds = BigRational::new(2.into(), 3.into());
    ensure!(p == two_thirds, "P(compaction | h=4, pi=2, kappa=1, d=2) = {p}");

    let mut grid = Vec::new();
    for h in [6, 9, 12] {
        for pi in [2, 3, 4] {
            for kappa in [1, 2, 3] {
                let d = (h * (kappa + 1)) / 4;
                grid.push((h, pi, kappa, d, Target::Compaction));
                grid.push((h, pi, kappa, h - kappa.min(h / 2), Target::WorstFrag));
            }
        }
    }
    // spread the chosen points over the whole grid
    let step = (grid.len() / points.max(1)).max(1);
    let chosen: Vec<_> = grid.into_iter().step_by(step).take(points).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for &(h, pi, kappa, d, target) in &chosen {
        let cfg = AutomatonConfig::new(pi, Limit::Finite(kappa)).unwrap();
        let model = tryo!(build_dtmc(&cfg, MutatorWord::new(h, d).unwrap(), Encoding::Positional, None));
        let exact = markov::ratio_to_f64(&tryo!(reach_probability(&model, target)));
        let goal = if target == Target::Compaction { Goal::Compaction } else { Goal::WorstFrag };
        let (mc, se) = estimate(&mut rng, h, pi, kappa, d, goal, trials);
        let dev = (mc - exact).abs();
        let bound = 4.0 * se.max(1.0 / trials as f64);
        ensure!(
            dev <= bound,
            "h={h} pi={pi} kappa={kappa} d={d} {target}: exact {exact:.6}, simulated {mc:.6} (4 SE = {bound:.2e})"
        );
        worst = worst.max(if se > 0.0 { dev / se } else { 0.0 });
    }
    Outcome::Pass(format!(
        "2/3 exact; {} grid points within 4 SE of {trials} trials (worst {worst:.2} SE)",
        chosen.len()
    ))
}

/// Monotonicity of the reach probabilities in d and kappa.
pub fn probability_trends() -> Outcome {
    let mut cells = 0;
    for (h, pi, kappas) in [(140, 10, vec![1, 2, 3, 4, 5]), (60, 4, vec![1, 2, 3, 4, 5, 6]), (100, 7, vec![1, 2, 3, 4])]
    {
        let ds: Vec<usize> = (0..=h).collect();
        let (rows, failed) =
            markov::sweep(h, pi, &kappas, &ds, &[Target::Compaction, Target::WorstFrag], Encoding::Positional, None);
        ensure!(failed.is_empty(), "sweep failed: {:?}", failed.iter().map(|f| f.2.to_string()).collect::<Vec<_>>());
        let get = |k: usize, d: usize, t: Target| {
            rows.iter().find(|r| r.kappa == k && r.d == d && r.target == t).map(|r| r.probability.clone()).unwrap()
        };
        for &k in &kappas {
            for d in 1..=h {
                ensure!(
                    get(k, d, Target::Compaction) >= get(k, d - 1, Target::Compaction),
                    "h={h} pi={pi} kappa={k}: P(compaction) drops from d={} to d={d}",
                    d - 1
                );
            }
        }
        for w in kappas.windows(2) {
            for d in 0..=h {
                ensure!(
                    get(w[1], d, Target::Compaction) <= get(w[0], d, Target::Compaction),
                    "h={h} pi={pi} d={d}: P(compaction) rises from kappa {} to {}",
                    w[0],
                    w[1]
                );
            }
            let max_over_d = |k| (0..=h).map(|d| get(k, d, Target::WorstFrag)).max().unwrap();
            ensure!(
                max_over_d(w[1]) <= max_over_d(w[0]),
                "h={h} pi={pi}: max P(worst fragmentation) rises from kappa {} to {}",
                w[0],
                w[1]
            );
        }
        cells += rows.len();
    }
    Outcome::Pass(format!("{cells} exact probabilities, all three trends hold"))
}

/// Atomic copy steps stay within iota; transient pages within the thread count.
pub fn latency_bound(ops: u64, threads: usize) -> Outcome {
    let dist = SizeDistribution::preset("hummingbird-like").unwrap();
    let mut parts = Vec::new();
    for iota in [16, 64, 512] {
        let p = BenchParams {
            heap: HeapConfig::new(256 << 20)
                .kappa(Limit::Finite(1))
                .iota(Limit::Finite(iota))
                .lock_regime(LockRegime::Page),
            mode: DeploymentMode::SharedGlobal,
            threads,
            ops,
            batch: 512,
            share: 0.25,
            dist: dist.clone(),
            seed: iota as u64,
        };
        let r = tryo!(bench::run_bench(&p));
        let s = &r.stats;
        ensure!(r.reconciled, "iota {iota}: counters do not reconcile");
        ensure!(s.max_step_bytes <= iota, "iota {iota}: a step copied {} bytes", s.max_step_bytes);
        ensure!(
            s.peak_transient_pages <= threads,
            "iota {iota}: {} transient pages with {threads} threads",
            s.peak_transient_pages
        );
        ensure!(s.kappa_violations == 0, "iota {iota}: {} kappa violations", s.kappa_violations);
        ensure!(s.moves > 0, "iota {iota}: nothing moved");
        parts.push(format!("iota {iota}: max step {} B, peak transient {}", s.max_step_bytes, s.peak_transient_pages));
    }
    Outcome::Pass(format!("{threads} threads, {ops} ops each; {}", parts.join("; ")))
}

/// Many threads on one heap: ledger, logs and free lists stay consistent.
pub fn concurrency_soundness(ops_per_run: usize, threads: usize, seed: u64) -> Outcome {
    let mut parts = Vec::new();
    for regime in [LockRegime::SizeClass, LockRegime::Page] {
        for mode in [DeploymentMode::SharedGlobal, DeploymentMode::ThreadLocal] {
            match stress_run(regime, mode, ops_per_run, threads, seed) {
                Ok(s) => parts.push(s),
                Err(e) => return Outcome::Fail(format!("{regime}/{mode}: {e}")),
            }
        }
    }
    match freelist_stress(threads, ops_per_run) {
        Ok(s) => parts.push(s),
        Err(e) => return Outcome::Fail(e),
    }
    Outcome::Pass(parts.join("; "))
}

fn drain_logs(heap: &SharedHeap, states: &[Mutex<IncrementalState>]) -> Result<usize, String> {
    let mut units = 0;
    for (slot, st) in states.iter().enumerate() {
        let log = heap.take_log(slot);
        units += log.len();
        let mut st = st.lock();
        let start = std::mem::take(&mut *st);
        *st = replay_from(&model(heap, slot), start, &log).map_err(|e| format!("slot {slot}: {e}"))?;
    }
    Ok(units)
}

fn stress_run(
    regime: LockRegime,
    mode: DeploymentMode,
    ops: usize,
    threads: usize,
    seed: u64,
) -> Result<String, String> {
    let cfg = HeapConfig::new(32 << 20)
        .page_bytes(4096)
        .classes([32, 64, 128, 256, 512, 1024, 2048])
        .kappa(Limit::Finite(2))
        .iota(Limit::Finite(64))
        .lock_regime(regime)
        .spill_bound(8)
        .record_logs(true);
    let dep = Deployment::new(mode, cfg, threads).map_err(|e| e.to_string())?;
    let heap = &dep.heaps()[0];
    let classes = heap.layouts().len();
    let usable: Vec<usize> = heap.layouts().iter().map(|l| l.usable).collect();
    let ledger: Vec<AtomicI64> = (0..classes).map(|_| AtomicI64::new(0)).collect();
    let states: Vec<Mutex<IncrementalState>> =
        (0..heap.slots()).map(|_| Mutex::new(IncrementalState::default())).collect();
    let inboxes: Vec<Mutex<Vec<Obj>>> = (0..threads).map(|_| Mutex::new(Vec::new())).collect();
    let units = AtomicUsize::new(0);
    let failure: Mutex<Option<String>> = Mutex::new(None);
    let per_thread = ops / threads;
    let survivors: Vec<Vec<Obj>> = std::thread::scope(|s| {
        let workers: Vec<_> = (0..threads)
            .map(|t| {
                let (dep, ledger, states, inboxes, units, failure, usable) =
                    (&dep, &ledger, &states, &inboxes, &units, &failure, &usable);
                s.spawn(move || {
                    let fail = |msg: String| {
                        failure.lock().get_or_insert(msg);
                    };
                    let mut m = dep.mutator(t).expect("mutator");
                    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((t as u64 + 1) * 7919));
                    let mut live: Vec<Obj> = Vec::new();
                    let mut next = (t as u64) << 40;
                    let mut done = 0;
                    while done < per_thread {
                        if failure.lock().is_some() {
                            break;
                        }
                        if m.has_pending() {
                            if rng.gen_bool(0.7) {
                                m.step();
                            } else {
                                m.drive_to_completion();
                            }
                            continue;
                        }
                        if t == 0 && done % 20_000 == 0 {
                            match drain_logs(heap, states) {
                                Ok(n) => {
                                    units.fetch_add(n, Ordering::Relaxed);
                                }
                                Err(e) => fail(e),
                            }
                        }
                        done += 1;
                        let incoming = inboxes[t].lock().pop();
                        if let Some(o) = incoming {
                            if let Err(e) = verify(&m, &o) {
                                fail(e);
                            }
                            let class = heap.class_for_size(o.len).unwrap();
                            match m.free_incremental(o.h) {
                                Ok(_) => {
                                    ledger[class].fetch_sub(1, Ordering::Relaxed);
                                }
                                Err(e) => fail(format!("free of a received object: {e}")),
                            }
                            continue;
                        }
                        if live.is_empty() || (live.len() < 200 && rng.gen_bool(0.5)) {
                            let class = rng.gen_range(0..usable.len());
                            let len = rng.gen_range(1..=usable[class]);
                            let data = payload(next, len);
                            match m.alloc_bytes(&data) {
                                Ok(h) => {
                                    ledger[heap.class_for_size(len).unwrap()].fetch_add(1, Ordering::Relaxed);
                                    live.push(Obj { h, id: next, len, sum: checksum(&data) });
                                    next += 1;
                                }
                                Err(e) => fail(format!("alloc: {e}")),
                            }
                        } else {
                            let o = live.swap_remove(rng.gen_range(0..live.len()));
                            if rng.gen_bool(0.2) {
                                inboxes[(t + 1) % threads].lock().push(o);
                                continue;
                            }
                            if let Err(e) = verify(&m, &o) {
                                fail(e);
                            }
                            let class = heap.class_for_size(o.len).unwrap();
                            match m.free_incremental(o.h) {
                                Ok(FreeOutcome::Done | FreeOutcome::Pending) => {
                                    ledger[class].fetch_sub(1, Ordering::Relaxed);
                                }
                                Err(e) => fail(format!("free: {e}")),
                            }
                        }
                    }
                    m.drive_to_completion();
                    live
                })
            })
            .collect();
        workers.into_iter().map(|w| w.join().expect("worker panicked")).collect()
    });
    if let Some(e) = failure.lock().take() {
        return Err(e);
    }
    let mut m = dep.mutator(0).map_err(|e| e.to_string())?;
    let mut held: Vec<Obj> = survivors.into_iter().flatten().collect();
    for inbox in &inboxes {
        held.append(&mut inbox.lock());
    }
    for o in &held {
        verify(&m, o)?;
    }
    let remaining = held.len();
    m.drive_to_completion();
    drop(m);
    let report = heap.fragmentation_report();
    for (class, l) in ledger.iter().enumerate() {
        let found: usize = report.classes.iter().filter(|c| c.class == class).map(|c| c.objects).sum();
        let want = l.load(Ordering::Relaxed);
        if found as i64 != want {
            return Err(format!("class {class}: ledger {want}, heap {found}"));
        }
    }
    if report.objects() != remaining {
        return Err(format!("{remaining} objects held, heap reports {}", report.objects()));
    }
    heap.audit().map_err(|e| e.to_string())?;
    let n = drain_logs(heap, &states)?;
    let total_units = units.load(Ordering::Relaxed) + n;
    let s = heap.stats();
    if s.kappa_violations != 0 {
        return Err(format!("{} kappa violations", s.kappa_violations));
    }
    Ok(format!(
        "{regime}/{mode}: {} ops, {total_units} units replayed, {} moves ({} canceled, {} conflicts)",
        s.allocs + s.frees,
        s.moves,
        s.jobs_canceled,
        s.conflicts
    ))
}

fn freelist_stress(threads: usize, ops: usize) -> Result<String, String> {
    const N: usize = 2048;
    let fl = TwoLevelFreeList::new(N, 16);
    let held: Vec<AtomicBool> = (0..N).map(|_| AtomicBool::new(false)).collect();
    let doubles = AtomicUsize::new(0);
    let per = ops / threads;
    std::thread::scope(|s| {
        for t in 0..threads {
            let (fl, held, doubles) = (&fl, &held, &doubles);
            s.spawn(move || {
                let mut p = PrivateList::new();
                let mut mine = Vec::new();
                let mut rng = ChaCha8Rng::seed_from_u64(t as u64);
                for _ in 0..per {
                    if mine.is_empty() || (mine.len() < 100 && rng.gen_bool(0.5)) {
                        if let Some(e) = fl.pop(&mut p) {
                            if held[e as usize].swap(true, Ordering::AcqRel) {
                                doubles.fetch_add(1, Ordering::Relaxed);
                            }
                            mine.push(e);
                        }
                    } else {
                        let e = mine.swap_remove(rng.gen_range(0..mine.len()));
                        held[e as usize].store(false, Ordering::Release);
                        fl.push(&mut p, e);
                    }
                }
                for e in mine {
                    held[e as usize].store(false, Ordering::Release);
                    fl.push(&mut p, e);
                }
                fl.flush(&mut p);
            });
        }
    });
    let d = doubles.load(Ordering::Relaxed);
    if d != 0 {
        return Err(format!("free list issued an element twice ({d} times)"));
    }
    let back = fl.public_len_quiescent();
    if back != N {
        return Err(format!("free list holds {back} of {N} elements after the run"));
    }
    Ok(format!("free list: {ops} ops on {threads} threads, no element issued twice, {N}/{N} returned"))
}

/// Mean fragmentation and memory use of one trace replayed under each kappa.
pub fn fragmentation_sweep(ops: usize, seed: u64) -> Result<Vec<(usize, f64, usize)>, String> {
    let dist = SizeDistribution::preset("emacs-like").unwrap();
    let trace = generate(&dist, &GenParams { ops, seed, max_live: ops / 10, dynamics: Dynamics::Sawtooth });
    let mut out = Vec::new();
    for kappa in [1, 2, 3, 5, 8] {
        let cfg = HeapConfig::new(64 << 20).kappa(Limit::Finite(kappa));
        let r = bench::replay(&trace, cfg, 1).map_err(|e| e.to_string())?;
        if !r.reconciled {
            return Err(format!("kappa {kappa}: replay does not reconcile"));
        }
        out.push((kappa, r.mean_fragmentation_bytes, r.stats.peak_pages_in_use));
    }
    Ok(out)
}

pub fn fragmentation_trend(ops: usize, seed: u64) -> Outcome {
    let rows = match fragmentation_sweep(ops, seed) {
        Ok(r) => r,
        Err(e) => return Outcome::Fail(e),
    };
    let shown = rows.iter().map(|(k, f, p)| format!("k{k}: F {f:.0} B, {p} pages")).collect::<Vec<_>>().join(", ");
    for w in rows.windows(2) {
        ensure!(w[1].1 >= w[0].1, "F drops from kappa {} to {}: {shown}", w[0].0, w[1].0);
        ensure!(w[1].2 <= w[0].2, "pages used rise from kappa {} to {}: {shown}", w[0].0, w[1].0);
    }
    let last = rows.last().unwrap().2;
    ensure!(rows[rows.len() - 2].2 == last, "pages used still change at the largest kappa: {shown}");
    Outcome::Pass(shown)
}

/// Thread-local classes scale with threads; one global set of classes does not.
pub fn throughput_scaling(ops: u64, cores: usize) -> Outcome {
    if cores < 4 {
        return Outcome::Skip(format!("host has {cores} core(s); the criterion needs at least 4"));
    }
    let rate = |mode, threads| {
        let p = BenchParams {
            heap: HeapConfig::new(512 << 20).kappa(Limit::Finite(2)),
            mode,
            threads,
            ops: ops * threads as u64,
            batch: 2048,
            share: 0.0,
            dist: SizeDistribution::preset("espresso-like").unwrap(),
            seed: 3,
        };
        bench::run_bench(&p).map(|r| r.ops_per_sec())
    };
    let one = tryo!(rate(DeploymentMode::ThreadLocal, 1));
    let local = tryo!(rate(DeploymentMode::ThreadLocal, 4));
    let one_g = tryo!(rate(DeploymentMode::SharedGlobal, 1));
    let global = tryo!(rate(DeploymentMode::SharedGlobal, 4));
    let (sl, sg) = (local / one, global / one_g);
    let msg = format!("speedup at 4 threads: local {sl:.2}x, global {sg:.2}x");
    if sl >= 2.0 && sg < 2.0 {
        Outcome::Pass(msg)
    } else {
        Outcome::Fail(msg)
    }
}
