//! Run reports, CSV rows and text summaries.
//!
//! CSV rows hold only values that are reproducible for a fixed seed and a
//! single thread. Wall-clock figures go to the text summary, or to extra
//! trailing columns when timing output is requested.

use std::fmt::Write as _;
use std::time::Duration;

use crate::concurrent::DeploymentMode;
use crate::config::{HeapConfig, Limit, LockRegime};
use crate::heap::{ClassReport, HeapStats};

pub const BENCH_CSV_VERSION: &str = "# cfit-bench v1";
pub const REPLAY_CSV_VERSION: &str = "# cfit-replay v1";

const COMMON_COLUMNS: &str = "mode,threads,locks,kappa,iota,share,allocs,frees,oom,live,pages_used,peak_pages,\
mean_pages,mean_fragmentation_bytes,peak_fragmentation_bytes,final_fragmentation_bytes,not_full_pages,\
moves,bytes_copied,copy_steps,steps_per_free,max_step_bytes,jobs_started,jobs_completed,jobs_canceled,conflicts,\
peak_transient_pages,peak_active_jobs,kappa_violations,reconciled";
const TIMING_COLUMNS: &str = "elapsed_s,ops_per_s,alloc_ns,free_ns";

#[derive(Debug, Clone, Default)]
pub struct ThreadReport {
    pub allocs: u64,
    pub frees: u64,
    pub oom: u64,
    pub shared_out: u64,
    pub shared_in: u64,
    pub alloc_time: Duration,
    pub free_time: Duration,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub mode: DeploymentMode,
    pub threads: usize,
    pub locks: LockRegime,
    pub kappa: Limit,
    pub iota: Limit,
    pub share: f64,
    pub allocs: u64,
    pub frees: u64,
    /// Allocation attempts refused for lack of pages.
    pub oom: u64,
    pub live_objects: usize,
    /// Pages in use at the end of the run.
    pub pages_used: usize,
    pub mean_pages_used: f64,
    pub not_full_pages: usize,
    pub fragmentation_bytes: usize,
    pub mean_fragmentation_bytes: f64,
    pub peak_fragmentation_bytes: usize,
    pub stats: HeapStats,
    pub classes: Vec<ClassReport>,
    pub per_thread: Vec<ThreadReport>,
    pub elapsed: Duration,
    /// Summed over threads.
    pub alloc_time: Duration,
    pub free_time: Duration,
    /// Op counters, heap counters and a full heap audit agree.
    pub reconciled: bool,
}

fn nanos_per(d: Duration, n: u64) -> f64 {
    if n == 0 {
        0.0
    } else {
        d.as_nanos() as f64 / n as f64
    }
}

impl RunReport {
    pub fn new(cfg: &HeapConfig, mode: DeploymentMode, threads: usize, share: f64) -> RunReport {
        RunReport {
            mode,
            threads,
            locks: cfg.lock_regime,
            kappa: cfg.kappa,
            iota: cfg.iota,
            share,
            allocs: 0,
            frees: 0,
            oom: 0,
            live_objects: 0,
            pages_used: 0,
            mean_pages_used: 0.0,
            not_full_pages: 0,
            fragmentation_bytes: 0,
            mean_fragmentation_bytes: 0.0,
            peak_fragmentation_bytes: 0,
            stats: HeapStats::default(),
            classes: Vec::new(),
            per_thread: Vec::new(),
            elapsed: Duration::ZERO,
            alloc_time: Duration::ZERO,
            free_time: Duration::ZERO,
            reconciled: false,
        }
    }

    pub fn ops(&self) -> u64 {
        self.allocs + self.frees
    }

    pub fn ops_per_sec(&self) -> f64 {
        let s = self.elapsed.as_secs_f64();
        if s > 0.0 {
            self.ops() as f64 / s
        } else {
            0.0
        }
    }

    pub fn alloc_ns(&self) -> f64 {
        nanos_per(self.alloc_time, self.allocs)
    }

    pub fn free_ns(&self) -> f64 {
        nanos_per(self.free_time, self.frees)
    }

    /// Atomic copy steps per deallocation, the latency surrogate.
    pub fn steps_per_free(&self) -> f64 {
        if self.frees == 0 {
            0.0
        } else {
            self.stats.copy_steps as f64 / self.frees as f64
        }
    }

    pub fn csv_header(timing: bool) -> String {
        if timing {
            format!("{COMMON_COLUMNS},{TIMING_COLUMNS}")
        } else {
            COMMON_COLUMNS.to_string()
        }
    }

    /// The CSV row without timing columns.
    pub fn deterministic_fields(&self) -> String {
        let s = &self.stats;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{:.3},{:.3},{},{},{},{},{},{},{:.4},{},{},{},{},{},{},{},{},{}",
            self.mode,
            self.threads,
            self.locks,
            self.kappa,
            self.iota,
            self.share,
            self.allocs,
            self.frees,
            self.oom,
            self.live_objects,
            self.pages_used,
            s.peak_pages_in_use,
            self.mean_pages_used,
            self.mean_fragmentation_bytes,
            self.peak_fragmentation_bytes,
            self.fragmentation_bytes,
            self.not_full_pages,
            s.moves,
            s.bytes_copied,
            s.copy_steps,
            self.steps_per_free(),
            s.max_step_bytes,
            s.jobs_started,
            s.jobs_completed,
            s.jobs_canceled,
            s.conflicts,
            s.peak_transient_pages,
            s.peak_active_jobs,
            s.kappa_violations,
            self.reconciled,
        )
    }

    pub fn csv_row(&self, timing: bool) -> String {
        let mut row = self.deterministic_fields();
        if timing {
            write!(
                row,
                ",{:.6},{:.0},{:.1},{:.1}",
                self.elapsed.as_secs_f64(),
                self.ops_per_sec(),
                self.alloc_ns(),
                self.free_ns()
            )
            .expect("writing to a string");
        }
        row
    }

    pub fn summary(&self) -> String {
        let s = &self.stats;
        let mut out = String::new();
        let w = &mut out;
        let _ = writeln!(
            w,
            "mode {} threads {} locks {} kappa {} iota {} share {}",
            self.mode, self.threads, self.locks, self.kappa, self.iota, self.share
        );
        let _ = writeln!(
            w,
            "ops {} (alloc {}, free {}, refused {}) in {:.3} s, {:.0} ops/s, alloc {:.0} ns, free {:.0} ns",
            self.ops(),
            self.allocs,
            self.frees,
            self.oom,
            self.elapsed.as_secs_f64(),
            self.ops_per_sec(),
            self.alloc_ns(),
            self.free_ns()
        );
        let _ = writeln!(
            w,
            "pages: final {}, peak {}, mean {:.1}; fragmentation bytes: mean {:.0}, peak {}",
            self.pages_used,
            s.peak_pages_in_use,
            self.mean_pages_used,
            self.mean_fragmentation_bytes,
            self.peak_fragmentation_bytes
        );
        let _ = writeln!(
            w,
            "moves {} ({} bytes in {} steps, largest {}), jobs {}/{} canceled {} conflicts {}, kappa violations {}",
            s.moves,
            s.bytes_copied,
            s.copy_steps,
            s.max_step_bytes,
            s.jobs_completed,
            s.jobs_started,
            s.jobs_canceled,
            s.conflicts,
            s.kappa_violations
        );
        if self.per_thread.len() > 1 {
            for (i, t) in self.per_thread.iter().enumerate() {
                let _ = writeln!(
                    w,
                    "  thread {i}: alloc {} free {} refused {} handed out {} received {}",
                    t.allocs, t.frees, t.oom, t.shared_out, t.shared_in
                );
            }
        }
        for c in &self.classes {
            let _ = writeln!(
                w,
                "  class {:>2} ({:>5} B, pi {:>4}): objects {:>7} pages {:>5} not-full {:>3} free blocks {}",
                c.class,
                c.block_bytes,
                c.pi,
                c.objects,
                c.pages(),
                c.not_full_pages,
                c.fragmentation_blocks
            );
        }
        let _ = writeln!(
            w,
            "live {} objects; ledger {}",
            self.live_objects,
            if self.reconciled { "reconciled" } else { "MISMATCH" }
        );
        out
    }
}
