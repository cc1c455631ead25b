use std::fs;
use std::io::{self, Write};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use compact_fit::automaton::AutomatonConfig;
use compact_fit::bench::report::{BENCH_CSV_VERSION, REPLAY_CSV_VERSION};
use compact_fit::bench::{self, BenchParams, Dynamics, GenParams, RunReport, SizeDistribution, Trace};
use compact_fit::concurrent::DeploymentMode;
use compact_fit::markov::{self, Encoding, MutatorWord, Target};
use compact_fit::{Addressing, HeapConfig, Limit, LockRegime};

#[derive(Parser)]
#[command(
    name = "cfit",
    version,
    about = "Compacting real-time heap: benchmarks, trace replay and exact fragmentation analysis"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Batch allocate/free microbenchmark.
    Bench(BenchArgs),
    /// Replay an allocation trace, optionally sweeping kappa.
    Replay(ReplayArgs),
    /// Exact probabilities of reaching compaction or worst-case fragmentation.
    Analyze(AnalyzeArgs),
    /// Write a synthetic allocation trace.
    GenTrace(GenTraceArgs),
}

#[derive(Args)]
struct HeapArgs {
    /// Compaction increment in bytes, or `inf`.
    #[arg(long, default_value = "inf")]
    iota: Limit,
    #[arg(long, default_value = "sizeclass")]
    locks: LockRegime,
    #[arg(long, default_value_t = 16 * 1024)]
    page_bytes: usize,
    /// Ascending block sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    classes: Option<Vec<usize>>,
    #[arg(long, default_value_t = 256 << 20)]
    arena_bytes: usize,
    /// `abstract` (movable, handle table) or `direct` (never moves).
    #[arg(long, default_value = "abstract", value_parser = parse_addressing)]
    addressing: Addressing,
}

impl HeapArgs {
    fn config(&self, kappa: Limit) -> HeapConfig {
        let mut cfg = HeapConfig::new(self.arena_bytes)
            .page_bytes(self.page_bytes)
            .kappa(kappa)
            .iota(self.iota)
            .lock_regime(self.locks)
            .addressing(self.addressing);
        if let Some(c) = &self.classes {
            cfg = cfg.classes(c.clone());
        }
        cfg
    }

    fn check(&self, kappa: Limit) -> Result<(), String> {
        if self.addressing == Addressing::Direct && (kappa.is_finite() || self.iota.is_finite()) {
            return Err("direct addressing never moves objects: use --kappa inf --iota inf".into());
        }
        Ok(())
    }
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    heap: HeapArgs,
    /// Partial compaction bound, or `inf`.
    #[arg(long, default_value = "inf")]
    kappa: Limit,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long, default_value = "global")]
    mode: DeploymentMode,
    /// Fraction of each batch freed by the next thread.
    #[arg(long, default_value_t = 0.0)]
    share: f64,
    /// Total allocations plus frees.
    #[arg(long, default_value_t = 1_000_000)]
    ops: u64,
    #[arg(long, default_value_t = bench::runner::DEFAULT_BATCH)]
    batch: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Size distribution: preset name or file of `size weight` lines.
    #[arg(long, default_value = "espresso-like")]
    dist: String,
    /// CSV output file, or `-` for stdout.
    #[arg(long)]
    csv: Option<String>,
    /// Append wall-clock columns to the CSV.
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct ReplayArgs {
    /// Trace file, or `-` for stdin.
    trace: String,
    #[command(flatten)]
    heap: HeapArgs,
    /// One bound or a comma separated sweep, e.g. `1,2,3,5,8`.
    #[arg(long, value_delimiter = ',', default_value = "inf")]
    kappa: Vec<Limit>,
    /// Sample memory use every this many operations.
    #[arg(long, default_value_t = 1)]
    sample_every: usize,
    #[arg(long)]
    csv: Option<String>,
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Allocations before the first deallocation.
    #[arg(long = "h")]
    h: usize,
    /// Blocks per page.
    #[arg(long = "pi")]
    pi: usize,
    /// Bounds to analyse: `5`, `1,2,3` or `1-4`.
    #[arg(long, value_parser = parse_ranges)]
    kappa: Ranges,
    /// Deallocation horizons, same syntax; defaults to `h`.
    #[arg(long = "d", value_parser = parse_ranges)]
    d: Option<Ranges>,
    /// `compaction`, `worst-frag` or `both`.
    #[arg(long, default_value = "compaction")]
    target: String,
    /// Only report model sizes.
    #[arg(long)]
    count_only: bool,
    /// `sorted`, `positional` or `both`. Probabilities default to
    /// positional, counts to both.
    #[arg(long)]
    encoding: Option<String>,
    #[arg(long)]
    csv: Option<String>,
    /// Abort a cell once this many states have been explored.
    #[arg(long)]
    max_states: Option<usize>,
}

#[derive(Args)]
struct GenTraceArgs {
    /// Size distribution: preset name or file of `size weight` lines.
    #[arg(long, default_value = "espresso-like")]
    dist: String,
    #[arg(long, default_value_t = 100_000)]
    ops: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Live-set ceiling.
    #[arg(long, default_value_t = 10_000)]
    live: usize,
    /// `ramp`, `steady` or `sawtooth`.
    #[arg(long, default_value = "steady")]
    dynamics: Dynamics,
    /// Output file, or `-` for stdout.
    #[arg(long, short, default_value = "-")]
    out: String,
}

fn parse_addressing(s: &str) -> Result<Addressing, String> {
    match s {
        "abstract" => Ok(Addressing::Abstract),
        "direct" => Ok(Addressing::Direct),
        _ => Err(format!("unknown addressing {s:?} (abstract|direct)")),
    }
}

#[derive(Clone, Debug)]
struct Ranges(Vec<usize>);

/// `a`, `a-b` and `a-b:step`, comma separated.
fn parse_ranges(s: &str) -> Result<Ranges, String> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let num = |x: &str| x.trim().parse::<usize>().map_err(|e| format!("{x:?}: {e}"));
        let (range, step) = match part.split_once(':') {
            Some((r, st)) => (r, num(st)?.max(1)),
            None => (part, 1),
        };
        match range.split_once('-') {
            Some((a, b)) => {
                let (a, b) = (num(a)?, num(b)?);
                if a > b {
                    return Err(format!("empty range {part:?}"));
                }
                out.extend((a..=b).step_by(step));
            }
            None => out.push(num(range)?),
        }
    }
    if out.is_empty() {
        return Err("no values given".into());
    }
    Ok(Ranges(out))
}

enum Failure {
    Usage(String),
    Run(String),
    Partial,
}

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Run(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

/// Writes CSV lines to a file or stdout. Returns whether stdout was used.
fn write_csv(dest: &str, lines: &[String]) -> io::Result<bool> {
    let mut text = lines.join("\n");
    text.push('\n');
    if dest == "-" {
        io::stdout().lock().write_all(text.as_bytes())?;
        Ok(true)
    } else {
        fs::write(dest, text)?;
        Ok(false)
    }
}

fn say(to_stderr: bool, text: &str) {
    if to_stderr {
        eprint!("{text}");
    } else {
        print!("{text}");
    }
}

fn cmd_bench(a: BenchArgs) -> CmdResult {
    a.heap.check(a.kappa).map_err(Failure::Usage)?;
    if a.share > 0.0 && a.mode == DeploymentMode::Instances {
        return Err(Failure::Usage("--share needs a mode where objects can cross threads (global or local)".into()));
    }
    if !(0.0..=1.0).contains(&a.share) {
        return Err(Failure::Usage("--share must lie in [0, 1]".into()));
    }
    let dist = SizeDistribution::load(&a.dist).map_err(Failure::Usage)?;
    let params = BenchParams {
        heap: a.heap.config(a.kappa),
        mode: a.mode,
        threads: a.threads,
        ops: a.ops,
        batch: a.batch,
        share: a.share,
        dist,
        seed: a.seed,
    };
    let report = bench::run_bench(&params)?;
    let mut quiet = false;
    if let Some(dest) = &a.csv {
        let lines = vec![BENCH_CSV_VERSION.to_string(), RunReport::csv_header(a.timing), report.csv_row(a.timing)];
        quiet = write_csv(dest, &lines)?;
    }
    say(quiet, &report.summary());
    if !report.reconciled {
        return Err(Failure::Run("counters do not reconcile with the heap".into()));
    }
    Ok(())
}

fn read_input(path: &str) -> io::Result<String> {
    if path == "-" {
        io::read_to_string(io::stdin())
    } else {
        fs::read_to_string(path)
    }
}

fn cmd_replay(a: ReplayArgs) -> CmdResult {
    for &k in &a.kappa {
        a.heap.check(k).map_err(Failure::Usage)?;
    }
    let text = read_input(&a.trace).map_err(|e| Failure::Usage(format!("{}: {e}", a.trace)))?;
    let trace = Trace::parse(&text).map_err(|e| Failure::Run(format!("{}: {e}", a.trace)))?;
    let mut lines = vec![REPLAY_CSV_VERSION.to_string(), RunReport::csv_header(a.timing)];
    let to_stdout = a.csv.as_deref() == Some("-");
    let mut ok = true;
    for &k in &a.kappa {
        let report = bench::replay(&trace, a.heap.config(k), a.sample_every)?;
        ok &= report.reconciled;
        say(to_stdout, &report.summary());
        lines.push(report.csv_row(a.timing));
    }
    if let Some(dest) = &a.csv {
        write_csv(dest, &lines)?;
    }
    if !ok {
        return Err(Failure::Run("counters do not reconcile with the heap".into()));
    }
    Ok(())
}

fn encodings(choice: Option<&str>, default_both: bool) -> Result<Vec<Encoding>, String> {
    match choice {
        Some("both") => Ok(vec![Encoding::Sorted, Encoding::Positional]),
        Some(s) => Ok(vec![s.parse()?]),
        None if default_both => Ok(vec![Encoding::Sorted, Encoding::Positional]),
        None => Ok(vec![Encoding::Positional]),
    }
}

fn cmd_analyze(a: AnalyzeArgs) -> CmdResult {
    if a.pi < 2 {
        return Err(Failure::Usage("--pi must be at least 2".into()));
    }
    let kappas = a.kappa.0.clone();
    if kappas.contains(&0) {
        return Err(Failure::Usage("--kappa needs positive bounds".into()));
    }
    let ds = a.d.clone().map_or_else(|| vec![a.h], |r| r.0);
    if let Some(&d) = ds.iter().find(|&&d| d > a.h) {
        return Err(Failure::Usage(format!("--d {d} exceeds --h {}", a.h)));
    }
    let targets = match a.target.as_str() {
        "both" => vec![Target::Compaction, Target::WorstFrag],
        t => vec![t.parse::<Target>().map_err(Failure::Usage)?],
    };
    let encs = encodings(a.encoding.as_deref(), a.count_only).map_err(Failure::Usage)?;

    if a.count_only {
        let mut lines = vec!["encoding,h,pi,kappa,d,states,transitions,seconds".to_string()];
        for &enc in &encs {
            for &k in &kappas {
                for &d in &ds {
                    let cfg = AutomatonConfig::new(a.pi, Limit::Finite(k))?;
                    let t0 = Instant::now();
                    let (states, transitions) = markov::count(&cfg, MutatorWord::new(a.h, d)?, enc)?;
                    let secs = t0.elapsed().as_secs_f64();
                    if a.csv.is_none() {
                        println!(
                            "{enc}: h={} pi={} kappa={k} d={d}: {states} states, {transitions} transitions ({secs:.2} s)",
                            a.h, a.pi
                        );
                    }
                    lines.push(format!("{enc},{},{},{k},{d},{states},{transitions},{secs:.3}", a.h, a.pi));
                }
            }
        }
        if let Some(dest) = &a.csv {
            write_csv(dest, &lines)?;
        }
        return Ok(());
    }

    let mut lines = vec![markov::CSV_VERSION.to_string()];
    let mut partial = false;
    for &enc in &encs {
        let (rows, failed) = markov::sweep(a.h, a.pi, &kappas, &ds, &targets, enc, a.max_states);
        if encs.len() > 1 {
            lines.push(format!("# encoding {enc}"));
        }
        lines.push(markov::CSV_HEADER.to_string());
        for r in &rows {
            if a.csv.is_none() {
                println!(
                    "h={} pi={} kappa={} d={} {}: P = {} ~ {:.6} ({} states, {} transitions)",
                    r.h,
                    r.pi,
                    r.kappa,
                    r.d,
                    r.target,
                    r.probability,
                    r.approx(),
                    r.states,
                    r.transitions
                );
            }
            lines.push(r.csv());
        }
        for (k, t, e) in &failed {
            partial = true;
            eprintln!("kappa={k} target={t}: {e}");
            lines.push(format!("# incomplete kappa={k} target={t}: {e}"));
        }
    }
    if let Some(dest) = &a.csv {
        write_csv(dest, &lines)?;
    }
    if partial {
        return Err(Failure::Partial);
    }
    Ok(())
}

fn cmd_gen_trace(a: GenTraceArgs) -> CmdResult {
    let dist = SizeDistribution::load(&a.dist).map_err(Failure::Usage)?;
    let trace = bench::generate(&dist, &GenParams { ops: a.ops, seed: a.seed, max_live: a.live, dynamics: a.dynamics });
    let text = trace.to_text();
    if a.out == "-" {
        io::stdout().lock().write_all(text.as_bytes())?;
    } else {
        fs::write(&a.out, text)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Bench(a) => cmd_bench(a),
        Cmd::Replay(a) => cmd_replay(a),
        Cmd::Analyze(a) => cmd_analyze(a),
        Cmd::GenTrace(a) => cmd_gen_trace(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("cfit: usage error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Run(msg)) => {
            eprintln!("cfit: {msg}");
            ExitCode::FAILURE
        }
        Err(Failure::Partial) => {
            eprintln!("cfit: state budget exceeded; results are partial");
            ExitCode::from(3)
        }
    }
}
