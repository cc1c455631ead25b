//! Exact reachability probabilities for mutators `A^h D^d`.
//!
//! After `h` allocations a size class sits in `⟨h, [h mod π]⟩` (or `⟨h, []⟩`
//! when `π` divides `h`). Each deallocation then hits one of the `h` live
//! objects uniformly at random, which turns the size-class automaton into a
//! discrete-time Markov chain. Compactions are outputs of the heap: they
//! happen with probability 1 and do not use up deallocation budget.
//!
//! All probabilities are exact. Within one level (`k` deallocations done)
//! every path has the same denominator `h(h-1)...(h-k+1)`, so mass is
//! carried as big-integer numerators and only the final answer becomes a
//! rational.
//!
//! Two state encodings are supported. [`Encoding::Positional`] keeps the
//! not-full pages in list order, exactly as the heap does. [`Encoding::Sorted`]
//! identifies states with the same multiset of used counts; it is exact for
//! deallocation but compacts out of the least-used page, so it models a
//! slightly different source-page policy.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use num_bigint::BigUint;
use num_rational::{BigRational, Ratio};
use num_traits::{One, Zero};
use rayon::prelude::*;

use crate::automaton::{
    classify, dealloc_choices, step_compact, step_dealloc, AutomatonConfig, AutomatonState, PageSelector, StateClass,
};
use crate::config::Limit;
use crate::error::ContractError;

#[derive(Debug, thiserror::Error)]
pub enum MarkovError {
    #[error(transparent)]
    Contract(#[from] ContractError),
    #[error("state budget of {budget} exceeded after {states} states and {transitions} transitions")]
    Budget { budget: usize, states: usize, transitions: usize },
    #[error("{0}")]
    Usage(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Encoding {
    Sorted,
    Positional,
}

impl FromStr for Encoding {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sorted" | "multiset" => Ok(Encoding::Sorted),
            "positional" | "sequence" => Ok(Encoding::Positional),
            _ => Err(format!("unknown encoding {s:?} (sorted|positional)")),
        }
    }
}

impl fmt::Display for Encoding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Encoding::Sorted => "sorted",
            Encoding::Positional => "positional",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Target {
    /// `n = κ + 1`.
    Compaction,
    /// `F = κ(π − 1)` in a state waiting for input.
    WorstFrag,
}

impl FromStr for Target {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "compaction" => Ok(Target::Compaction),
            "worst-frag" | "worst_frag" | "worstfrag" => Ok(Target::WorstFrag),
            _ => Err(format!("unknown target {s:?} (compaction|worst-frag)")),
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Target::Compaction => "compaction",
            Target::WorstFrag => "worst-frag",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MutatorWord {
    pub h: usize,
    pub d: usize,
}

impl MutatorWord {
    pub fn new(h: usize, d: usize) -> Result<Self, MarkovError> {
        if d > h {
            return Err(MarkovError::Usage(format!("d = {d} exceeds h = {h}")));
        }
        Ok(MutatorWord { h, d })
    }
}

fn finite_kappa(cfg: &AutomatonConfig) -> Result<usize, MarkovError> {
    cfg.kappa.finite().ok_or_else(|| MarkovError::Usage("the analysis needs a finite κ".into()))
}

pub fn initial_state(h: usize, pi: usize) -> AutomatonState {
    AutomatonState::after_allocations(h, pi)
}

/// Successors of an input state under one uniformly random deallocation.
/// Outcomes reaching the same state are merged.
pub fn dealloc_distribution(
    state: &AutomatonState,
    cfg: &AutomatonConfig,
) -> Result<Vec<(AutomatonState, Ratio<u64>)>, ContractError> {
    if state.h == 0 {
        return Err(ContractError("no object left to deallocate".into()));
    }
    weighted_successors(state, cfg)
        .map(|v| v.into_iter().map(|(s, w)| (s, Ratio::new(w as u64, state.h as u64))).collect())
}

fn weighted_successors(
    state: &AutomatonState,
    cfg: &AutomatonConfig,
) -> Result<Vec<(AutomatonState, usize)>, ContractError> {
    let mut out: Vec<(AutomatonState, usize)> = Vec::new();
    for sel in dealloc_choices(state) {
        let w = match sel {
            PageSelector::NotFull(i) => state.u[i],
            PageSelector::Full => state.in_full_pages(),
            PageSelector::Source => unreachable!(),
        };
        let next = step_dealloc(state, cfg, sel)?;
        match out.iter_mut().find(|(s, _)| *s == next) {
            Some(e) => e.1 += w,
            None => out.push((next, w)),
        }
    }
    Ok(out)
}

/// Canonical successors of an input state with their weights, merged after
/// canonicalization. The flag marks compaction states.
fn successors(
    state: &AutomatonState,
    cfg: &AutomatonConfig,
    enc: Encoding,
) -> Result<Vec<(AutomatonState, bool, usize)>, ContractError> {
    let mut out: Vec<(AutomatonState, bool, usize)> = Vec::new();
    for (succ, w) in weighted_successors(state, cfg)? {
        let comp = classify(&succ, cfg)? == StateClass::Compaction;
        let succ = canonical(succ, enc, comp);
        match out.iter_mut().find(|(s, c, _)| *s == succ && *c == comp) {
            Some(e) => e.2 += w,
            None => out.push((succ, comp, w)),
        }
    }
    Ok(out)
}

fn canonical(s: AutomatonState, enc: Encoding, compaction: bool) -> AutomatonState {
    match enc {
        Encoding::Positional => s,
        Encoding::Sorted if compaction => {
            let mut s = s;
            let last = s.u.pop();
            s.u.sort_unstable();
            s.u.extend(last);
            s
        }
        Encoding::Sorted => s.sorted(),
    }
}

fn is_target(s: &AutomatonState, cfg: &AutomatonConfig, kappa: usize, target: Target, compaction: bool) -> bool {
    match target {
        Target::Compaction => compaction,
        Target::WorstFrag => !compaction && s.n() == kappa && s.fragmentation(cfg.pi) == kappa * (cfg.pi - 1),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    /// Waiting for the next deallocation.
    Input,
    /// A mandatory compaction is pending.
    Compaction,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transition {
    pub from: u32,
    pub to: u32,
    pub prob: Ratio<u64>,
}

/// The explicit chain reachable within `d` deallocations.
#[derive(Debug, Clone)]
pub struct DtmcModel {
    pub cfg: AutomatonConfig,
    pub word: MutatorWord,
    pub encoding: Encoding,
    pub states: Vec<AutomatonState>,
    pub kinds: Vec<NodeKind>,
    /// Grouped by source state.
    pub transitions: Vec<Transition>,
    pub initial: usize,
}

impl DtmcModel {
    pub fn state_count(&self) -> usize {
        self.states.len()
    }

    pub fn transition_count(&self) -> usize {
        self.transitions.len()
    }
}

/// Breadth-first expansion of every state reachable within `word.d`
/// deallocations. `budget` caps the number of states.
pub fn build_dtmc(
    cfg: &AutomatonConfig,
    word: MutatorWord,
    encoding: Encoding,
    budget: Option<usize>,
) -> Result<DtmcModel, MarkovError> {
    let mut states = Vec::new();
    let mut kinds = Vec::new();
    let mut transitions = Vec::new();
    let mut index: HashMap<(AutomatonState, bool), u32> = HashMap::new();
    let start = canonical(initial_state(word.h, cfg.pi), encoding, false);
    let start_comp = classify(&start, cfg)? == StateClass::Compaction;
    let mut intern = |s: AutomatonState, comp: bool, states: &mut Vec<AutomatonState>, kinds: &mut Vec<NodeKind>| {
        let key = (s, comp);
        if let Some(&i) = index.get(&key) {
            return (i, false);
        }
        let i = states.len() as u32;
        states.push(key.0.clone());
        kinds.push(if comp { NodeKind::Compaction } else { NodeKind::Input });
        index.insert(key, i);
        (i, true)
    };
    intern(start, start_comp, &mut states, &mut kinds);
    let mut level: Vec<u32> = vec![0];
    for k in 0..=word.d {
        // resolve compactions at this level, then expand inputs
        let mut inputs = Vec::new();
        for &i in &level {
            if kinds[i as usize] == NodeKind::Compaction {
                let next = canonical(step_compact(&states[i as usize], cfg)?, encoding, false);
                let (j, new) = intern(next, false, &mut states, &mut kinds);
                transitions.push(Transition { from: i, to: j, prob: Ratio::one() });
                if new {
                    inputs.push(j);
                }
            } else {
                inputs.push(i);
            }
        }
        if let Some(b) = budget {
            if states.len() > b {
                return Err(MarkovError::Budget { budget: b, states: states.len(), transitions: transitions.len() });
            }
        }
        if k == word.d {
            break;
        }
        let mut next_level = Vec::new();
        for &i in &inputs {
            let s = states[i as usize].clone();
            for (succ, comp, w) in successors(&s, cfg, encoding)? {
                let (j, new) = intern(succ, comp, &mut states, &mut kinds);
                transitions.push(Transition { from: i, to: j, prob: Ratio::new(w as u64, s.h as u64) });
                if new {
                    next_level.push(j);
                }
            }
        }
        level = next_level;
    }
    transitions.sort_by_key(|t| t.from);
    Ok(DtmcModel { cfg: *cfg, word, encoding, states, kinds, transitions, initial: 0 })
}

/// Probability of hitting `target` within the model's horizon; mass stops
/// at the first hit.
pub fn reach_probability(model: &DtmcModel, target: Target) -> Result<BigRational, MarkovError> {
    let kappa = finite_kappa(&model.cfg)?;
    let n = model.states.len();
    let mut offsets = vec![0usize; n + 1];
    for t in &model.transitions {
        offsets[t.from as usize + 1] += 1;
    }
    for i in 0..n {
        offsets[i + 1] += offsets[i];
    }
    // Levels in order; within a level compactions settle before inputs.
    let mut order: Vec<usize> = (0..n).collect();
    let h0 = model.word.h;
    order.sort_by_key(|&i| {
        let s = &model.states[i];
        (h0 - s.h, model.kinds[i] == NodeKind::Input)
    });
    let mut mass: Vec<BigRational> = vec![BigRational::zero(); n];
    mass[model.initial] = BigRational::one();
    let mut hit = BigRational::zero();
    for i in order {
        if mass[i].is_zero() {
            continue;
        }
        let m = std::mem::replace(&mut mass[i], BigRational::zero());
        if is_target(&model.states[i], &model.cfg, kappa, target, model.kinds[i] == NodeKind::Compaction) {
            hit += m;
            continue;
        }
        for t in &model.transitions[offsets[i]..offsets[i + 1]] {
            let p = BigRational::new((*t.prob.numer()).into(), (*t.prob.denom()).into());
            mass[t.to as usize] += &m * p;
        }
    }
    Ok(hit)
}

/// Probabilities and model sizes for every horizon `0..=d_max`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HorizonCurve {
    /// `probability[d]`: target hit within `d` deallocations.
    pub probability: Vec<BigRational>,
    pub states: Vec<usize>,
    pub transitions: Vec<usize>,
    /// Set when the state budget stopped the pass early; the vectors then
    /// cover only the horizons finished before that.
    pub truncated: bool,
}

/// One pass over the chain computing the reach probability for all horizons.
pub fn reach_curve(
    cfg: &AutomatonConfig,
    h: usize,
    d_max: usize,
    target: Target,
    encoding: Encoding,
    budget: Option<usize>,
) -> Result<HorizonCurve, MarkovError> {
    let kappa = finite_kappa(cfg)?;
    let d_max = d_max.min(h);
    let mut curve =
        HorizonCurve { probability: Vec::new(), states: Vec::new(), transitions: Vec::new(), truncated: false };
    let start = canonical(initial_state(h, cfg.pi), encoding, false);
    let mut pending: HashMap<AutomatonState, BigUint> = HashMap::new();
    let mut inputs: HashMap<AutomatonState, BigUint> = HashMap::new();
    if classify(&start, cfg)? == StateClass::Compaction {
        pending.insert(start, BigUint::one());
    } else {
        inputs.insert(start, BigUint::one());
    }
    let mut denom = BigUint::one();
    let mut hit = BigRational::zero();
    let (mut states, mut edges) = (0usize, 0usize);
    for k in 0..=d_max {
        // pending compactions of this level settle into inputs
        let mut hit_num = BigUint::zero();
        states += pending.len();
        for (s, m) in pending.drain() {
            edges += 1;
            if target == Target::Compaction {
                hit_num += &m;
            }
            let next = canonical(step_compact(&s, cfg)?, encoding, false);
            let e = inputs.entry(next).or_default();
            if target != Target::Compaction {
                *e += m;
            }
        }
        states += inputs.len();
        for (s, m) in inputs.iter_mut() {
            if !m.is_zero() && is_target(s, cfg, kappa, target, false) {
                hit_num += std::mem::take(m);
            }
        }
        if budget.is_some_and(|b| states > b) {
            curve.truncated = true;
            break;
        }
        if !hit_num.is_zero() {
            hit += BigRational::new(hit_num.into(), denom.clone().into());
        }
        curve.probability.push(hit.clone());
        curve.states.push(states);
        curve.transitions.push(edges);
        if k == d_max {
            break;
        }
        let hk = h - k;
        denom *= hk;
        let mut next: HashMap<AutomatonState, BigUint> = HashMap::new();
        for (s, m) in inputs.drain() {
            for (succ, comp, w) in successors(&s, cfg, encoding)? {
                edges += 1;
                let slot = if comp { pending.entry(succ).or_default() } else { next.entry(succ).or_default() };
                if !m.is_zero() {
                    *slot += &m * w;
                }
            }
        }
        inputs = next;
    }
    Ok(curve)
}

/// Counts states and transitions of the chain for `word`.
pub fn count(cfg: &AutomatonConfig, word: MutatorWord, encoding: Encoding) -> Result<(usize, usize), MarkovError> {
    let c = reach_curve(cfg, word.h, word.d, Target::Compaction, encoding, None)?;
    Ok((c.states[word.d], c.transitions[word.d]))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SweepRow {
    pub h: usize,
    pub pi: usize,
    pub kappa: usize,
    pub d: usize,
    pub target: Target,
    pub probability: BigRational,
    pub states: usize,
    pub transitions: usize,
}

pub const CSV_VERSION: &str = "# cfit-analyze v1";
pub const CSV_HEADER: &str = "h,pi,kappa,d,target,probability_num,probability_den,states,transitions";

impl SweepRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.h,
            self.pi,
            self.kappa,
            self.d,
            self.target,
            self.probability.numer(),
            self.probability.denom(),
            self.states,
            self.transitions
        )
    }

    pub fn approx(&self) -> f64 {
        ratio_to_f64(&self.probability)
    }
}

pub fn ratio_to_f64(r: &BigRational) -> f64 {
    use num_traits::ToPrimitive;
    // scale to keep precision for tiny values
    let scaled = r * BigRational::from_integer(BigUint::from(1u64 << 53).into());
    scaled.to_integer().to_f64().unwrap_or(f64::NAN) / (1u64 << 53) as f64
}

/// Evaluates every `(κ, target)` cell for horizons `ds`; cells run in
/// parallel. Failed cells are returned alongside the rows.
pub fn sweep(
    h: usize,
    pi: usize,
    kappas: &[usize],
    ds: &[usize],
    targets: &[Target],
    encoding: Encoding,
    budget: Option<usize>,
) -> (Vec<SweepRow>, Vec<(usize, Target, MarkovError)>) {
    let d_max = ds.iter().copied().max().unwrap_or(0);
    let cells: Vec<(usize, Target)> = kappas.iter().flat_map(|&k| targets.iter().map(move |&t| (k, t))).collect();
    let results: Vec<_> = cells
        .par_iter()
        .map(|&(kappa, target)| {
            let cfg = AutomatonConfig::new(pi, Limit::Finite(kappa)).map_err(MarkovError::from)?;
            let curve = reach_curve(&cfg, h, d_max, target, encoding, budget)?;
            let rows = ds
                .iter()
                .filter(|&&d| d < curve.probability.len())
                .map(|&d| SweepRow {
                    h,
                    pi,
                    kappa,
                    d,
                    target,
                    probability: curve.probability[d].clone(),
                    states: curve.states[d],
                    transitions: curve.transitions[d],
                })
                .collect::<Vec<_>>();
            let over = curve.truncated.then(|| MarkovError::Budget {
                budget: budget.unwrap_or(0),
                states: curve.states.last().copied().unwrap_or(0),
                transitions: curve.transitions.last().copied().unwrap_or(0),
            });
            Ok::<_, MarkovError>((rows, over))
        })
        .collect();
    let mut rows = Vec::new();
    let mut failed = Vec::new();
    for ((kappa, target), r) in cells.into_iter().zip(results) {
        match r {
            Ok((mut v, over)) => {
                rows.append(&mut v);
                if let Some(e) = over {
                    failed.push((kappa, target, e));
                }
            }
            Err(e) => failed.push((kappa, target, e)),
        }
    }
    (rows, failed)
}
