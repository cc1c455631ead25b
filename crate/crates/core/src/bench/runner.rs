//! Batch microbenchmark and trace replay.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dist::SizeDistribution;
use super::report::{RunReport, ThreadReport};
use super::trace::{Trace, TraceOp};
use crate::concurrent::{Deployment, DeploymentMode};
use crate::config::HeapConfig;
use crate::error::HeapError;
use crate::heap::{Handle, Heap, HeapStats, SharedHeap};

pub const DEFAULT_BATCH: usize = 2048;

#[derive(Debug, Clone)]
pub struct BenchParams {
    pub heap: HeapConfig,
    pub mode: DeploymentMode,
    pub threads: usize,
    /// Total operations over all threads; every allocation is later freed
    /// and both count.
    pub ops: u64,
    pub batch: usize,
    /// Fraction of every batch handed to the next thread to free.
    pub share: f64,
    pub dist: SizeDistribution,
    pub seed: u64,
}

#[derive(Default)]
struct Sampler {
    samples: u64,
    frag_sum: f64,
    frag_peak: usize,
    pages_sum: f64,
}

impl Sampler {
    fn take(&mut self, heap: &SharedHeap) {
        let r = heap.fragmentation_report();
        let f = r.fragmentation_bytes();
        self.samples += 1;
        self.frag_sum += f as f64;
        self.frag_peak = self.frag_peak.max(f);
        self.pages_sum += r.pages_in_use as f64;
    }

    fn finish(&self, report: &mut RunReport) {
        let n = self.samples.max(1) as f64;
        report.mean_fragmentation_bytes = self.frag_sum / n;
        report.peak_fragmentation_bytes = self.frag_peak;
        report.mean_pages_used = self.pages_sum / n;
    }
}

fn merge_stats(heaps: &[SharedHeap]) -> HeapStats {
    let mut out = HeapStats::default();
    for s in heaps.iter().map(SharedHeap::stats) {
        out.allocs += s.allocs;
        out.frees += s.frees;
        out.moves += s.moves;
        out.designations += s.designations;
        out.jobs_started += s.jobs_started;
        out.jobs_completed += s.jobs_completed;
        out.jobs_canceled += s.jobs_canceled;
        out.conflicts += s.conflicts;
        out.copy_steps += s.copy_steps;
        out.bytes_copied += s.bytes_copied;
        out.max_step_bytes = out.max_step_bytes.max(s.max_step_bytes);
        out.pages_in_use += s.pages_in_use;
        out.peak_pages_in_use += s.peak_pages_in_use;
        out.transient_pages += s.transient_pages;
        out.peak_transient_pages += s.peak_transient_pages;
        out.active_jobs += s.active_jobs;
        out.peak_active_jobs += s.peak_active_jobs;
        out.kappa_violations += s.kappa_violations;
    }
    out
}

/// Fills heap-derived fields and checks them against the op counters.
fn finish_report(report: &mut RunReport, heaps: &[SharedHeap]) {
    report.stats = merge_stats(heaps);
    report.classes.clear();
    let mut live = 0;
    for h in heaps {
        let r = h.fragmentation_report();
        live += r.objects();
        report.pages_used += r.pages_in_use;
        report.not_full_pages += r.not_full_pages();
        report.fragmentation_bytes += r.fragmentation_bytes();
        report.classes.extend(r.classes.into_iter().filter(|c| c.pages() > 0 || c.objects > 0));
    }
    report.live_objects = live;
    report.reconciled = report.allocs - report.frees == live as u64
        && report.stats.allocs == report.allocs
        && report.stats.frees == report.frees
        && heaps.iter().all(|h| h.audit().is_ok());
}

/// Runs the allocate-a-batch, free-the-batch loop on every thread. Each
/// batch is freed in random order.
pub fn run_bench(p: &BenchParams) -> Result<RunReport, HeapError> {
    let threads = p.threads.max(1);
    if !(0.0..=1.0).contains(&p.share) {
        return Err(HeapError::Config(format!("sharing ratio {} outside [0, 1]", p.share)));
    }
    let dep = Deployment::new(p.mode, p.heap.clone(), threads)?;
    if p.share > 0.0 && !dep.allows_sharing() {
        return Err(HeapError::Config("separate instances cannot share objects".into()));
    }
    let max_usable = dep.heaps()[0].layouts().last().map_or(0, |l| l.usable);
    let dist = p.dist.clamp_to(max_usable).map_err(HeapError::Config)?;
    let inboxes: Arc<Vec<Mutex<Vec<Handle>>>> = Arc::new((0..threads).map(|_| Mutex::new(Vec::new())).collect());
    let sampler = Mutex::new(Sampler::default());
    let batch = p.batch.max(1);
    let started = Instant::now();
    let per_thread: Vec<Result<ThreadReport, HeapError>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                let dep = &dep;
                let dist = &dist;
                let inboxes = &inboxes;
                let sampler = &sampler;
                let quota = p.ops / threads as u64 + u64::from((t as u64) < p.ops % threads as u64);
                s.spawn(move || -> Result<ThreadReport, HeapError> {
                    let mut m = dep.mutator(t)?;
                    let mut rng = ChaCha8Rng::seed_from_u64(p.seed ^ (t as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                    let mut r = ThreadReport::default();
                    let mut held: Vec<Handle> = Vec::with_capacity(batch);
                    let mut allocs_left = quota / 2;
                    while allocs_left > 0 {
                        let t0 = Instant::now();
                        while held.len() < batch && allocs_left > 0 {
                            allocs_left -= 1;
                            match m.alloc(dist.sample(&mut rng)) {
                                Ok(h) => {
                                    held.push(h);
                                    r.allocs += 1;
                                }
                                Err(HeapError::OutOfMemory { .. }) => {
                                    r.oom += 1;
                                    break;
                                }
                                Err(e) => return Err(e),
                            }
                        }
                        r.alloc_time += t0.elapsed();
                        if t == 0 {
                            sampler.lock().take(dep.heap_for(0));
                        }
                        if p.share > 0.0 && threads > 1 {
                            let n = (held.len() as f64 * p.share).round() as usize;
                            let moved = held.split_off(held.len() - n);
                            r.shared_out += moved.len() as u64;
                            inboxes[(t + 1) % threads].lock().extend(moved);
                        }
                        held.shuffle(&mut rng);
                        let t0 = Instant::now();
                        for h in held.drain(..) {
                            m.free(h)?;
                            r.frees += 1;
                        }
                        let incoming = std::mem::take(&mut *inboxes[t].lock());
                        for h in incoming {
                            m.free(h)?;
                            r.frees += 1;
                            r.shared_in += 1;
                        }
                        r.free_time += t0.elapsed();
                    }
                    Ok(r)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("bench worker panicked")).collect()
    });
    let elapsed = started.elapsed();
    let mut report = RunReport::new(&p.heap, p.mode, threads, p.share);
    for r in per_thread {
        let r = r?;
        report.allocs += r.allocs;
        report.frees += r.frees;
        report.oom += r.oom;
        report.alloc_time += r.alloc_time;
        report.free_time += r.free_time;
        report.per_thread.push(r);
    }
    // objects handed to a thread that had already finished
    let mut m = dep.mutator(0)?;
    for inbox in inboxes.iter() {
        for h in inbox.lock().drain(..) {
            m.free(h)?;
            report.frees += 1;
        }
    }
    drop(m);
    report.elapsed = elapsed;
    sampler.lock().finish(&mut report);
    finish_report(&mut report, dep.heaps());
    Ok(report)
}

#[derive(Debug, thiserror::Error)]
pub enum ReplayError {
    #[error("operation {index}: {source}")]
    Heap {
        index: usize,
        #[source]
        source: HeapError,
    },
    #[error(transparent)]
    Setup(#[from] HeapError),
}

/// Replays `trace` on a fresh single-threaded heap, sampling memory use
/// after every `sample_every` operations.
pub fn replay(trace: &Trace, cfg: HeapConfig, sample_every: usize) -> Result<RunReport, ReplayError> {
    let mut heap = Heap::new(cfg.clone())?;
    let mut ids: HashMap<u64, Handle> = HashMap::new();
    let mut report = RunReport::new(&cfg, DeploymentMode::SharedGlobal, 1, 0.0);
    let mut sampler = Sampler::default();
    let every = sample_every.max(1);
    let started = Instant::now();
    let (mut alloc_time, mut free_time) = (Duration::ZERO, Duration::ZERO);
    for (index, op) in trace.ops.iter().enumerate() {
        let wrap = |source| ReplayError::Heap { index, source };
        let t0 = Instant::now();
        match *op {
            TraceOp::Alloc { id, size } => {
                let h = heap.alloc(size).map_err(wrap)?;
                ids.insert(id, h);
                report.allocs += 1;
                alloc_time += t0.elapsed();
            }
            TraceOp::Free { id } => {
                let h = ids.remove(&id).ok_or(HeapError::InvalidHandle(id)).map_err(wrap)?;
                heap.free(h).map_err(wrap)?;
                report.frees += 1;
                free_time += t0.elapsed();
            }
        }
        if index % every == 0 {
            sampler.take(heap.shared());
        }
    }
    report.elapsed = started.elapsed();
    report.alloc_time = alloc_time;
    report.free_time = free_time;
    report.per_thread.push(ThreadReport {
        allocs: report.allocs,
        frees: report.frees,
        alloc_time,
        free_time,
        ..ThreadReport::default()
    });
    sampler.finish(&mut report);
    finish_report(&mut report, std::slice::from_ref(heap.shared()));
    Ok(report)
}
