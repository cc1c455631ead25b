//! Concrete page-level simulation of one size-class under `A^h D^d`,
//! written without the automaton so it can serve as an oracle for the
//! exact analysis.

use rand::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Goal {
    Compaction,
    WorstFrag,
}

pub struct PageSim {
    pi: usize,
    kappa: usize,
    // page of every live object
    objects: Vec<usize>,
    used: Vec<usize>,
    // not-full pages in list order
    notfull: Vec<usize>,
}

impl PageSim {
    pub fn new(pi: usize, kappa: usize) -> Self {
        PageSim { pi, kappa, objects: Vec::new(), used: Vec::new(), notfull: Vec::new() }
    }

    fn reset(&mut self, h: usize) {
        self.objects.clear();
        self.used.clear();
        self.notfull.clear();
        for i in 0..h {
            let p = i / self.pi;
            if p == self.used.len() {
                self.used.push(0);
            }
            self.used[p] += 1;
            self.objects.push(p);
        }
        if let Some(&last) = self.used.last() {
            if last < self.pi {
                self.notfull.push(self.used.len() - 1);
            }
        }
    }

    fn worst(&self) -> bool {
        self.notfull.len() == self.kappa && self.notfull.iter().all(|&p| self.used[p] == 1)
    }

    /// One trial: true if the goal is reached within `d` deallocations.
    pub fn trial<R: Rng>(&mut self, rng: &mut R, h: usize, d: usize, goal: Goal) -> bool {
        self.reset(h);
        if goal == Goal::WorstFrag && self.worst() {
            return true;
        }
        for _ in 0..d {
            let i = rng.gen_range(0..self.objects.len());
            let p = self.objects.swap_remove(i);
            if self.used[p] == self.pi {
                self.used[p] -= 1;
                self.notfull.push(p);
            } else {
                self.used[p] -= 1;
                if self.used[p] == 0 {
                    let at = self.notfull.iter().position(|&q| q == p).expect("page is not-full");
                    self.notfull.remove(at);
                }
            }
            if self.notfull.len() > self.kappa {
                if goal == Goal::Compaction {
                    return true;
                }
                // move one object from the first not-full page into the hole
                let from = self.notfull[0];
                let to = *self.notfull.last().unwrap();
                let o = self.objects.iter().position(|&q| q == from).expect("object on source page");
                self.objects[o] = to;
                self.used[from] -= 1;
                self.used[to] += 1;
                self.notfull.pop();
                if self.used[from] == 0 {
                    self.notfull.remove(0);
                }
            }
            if goal == Goal::WorstFrag && self.worst() {
                return true;
            }
        }
        false
    }
}

/// Fraction of `trials` runs that reach `goal`, and its standard error.
pub fn estimate<R: Rng>(
    rng: &mut R,
    h: usize,
    pi: usize,
    kappa: usize,
    d: usize,
    goal: Goal,
    trials: usize,
) -> (f64, f64) {
    let mut sim = PageSim::new(pi, kappa);
    let hits = (0..trials).filter(|_| sim.trial(rng, h, d, goal)).count();
    let p = hits as f64 / trials as f64;
    (p, (p * (1.0 - p) / trials as f64).sqrt())
}
