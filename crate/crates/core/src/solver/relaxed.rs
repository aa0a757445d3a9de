//! Largest trainable model size for a fixed latency, over relaxed subcarrier shares.
//!
//! For fixed shares every worker solves its own subproblem exactly (see `worker`). The
//! remaining outer problem is concave in the shares, over a product of column simplices.
//! Shares are updated multiplicatively towards subcarriers with large marginal value
//! (the negated indicator). The assignment that puts every subcarrier on its smallest
//! indicator gives a Frank-Wolfe duality gap, which bounds the distance to the optimum
//! from above and serves as the stopping rule.

use crate::cost_model::AllocationPlan;
use crate::scenario::Scenario;

use super::closed_form::DualState;
use super::worker::{max_load, noise_rows, NoiseRow, WorkerConsts, WorkerSolution};
use super::{SolveResult, SolverOptions};

const SHARE_FLOOR: f64 = 1e-30;
const MAX_EXPONENT: f64 = 4.0;

pub(crate) struct Snapshot {
    pub solutions: Vec<WorkerSolution>,
    pub total: f64,
    pub marginals: Vec<Vec<f64>>,
    pub gap: f64,
}

/// What the outer loop is asked to settle.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Goal {
    /// Run until the relative gap is below the tolerance.
    Converge,
    /// Stop as soon as the optimum is known to be at least, or below, the target.
    Decide(f64),
}

pub(crate) struct Outcome {
    pub snapshot: Snapshot,
    pub iterations: usize,
    pub converged: bool,
}

pub(crate) struct ShareSearch {
    pub consts: Vec<WorkerConsts>,
    pub noise: Vec<NoiseRow>,
    pub shares: Vec<Vec<f64>>,
    levels: Vec<Option<f64>>,
    exponent: f64,
}

impl ShareSearch {
    pub fn new(scenario: &Scenario, opts: &SolverOptions) -> Self {
        let k = scenario.num_workers();
        let n = scenario.num_subcarriers();
        ShareSearch {
            consts: (0..k).map(|i| WorkerConsts::new(scenario, i)).collect(),
            noise: noise_rows(scenario),
            shares: vec![vec![1.0 / k as f64; n]; k],
            levels: vec![None; k],
            exponent: opts.response_exponent,
        }
    }

    pub fn evaluate(&mut self, t: f64) -> Snapshot {
        evaluate_shares(&self.consts, &self.noise, &self.shares, &mut self.levels, t)
    }

    fn proposal(&self, snap: &Snapshot, exponent: f64) -> Vec<Vec<f64>> {
        let k_count = self.shares.len();
        let n_count = self.shares.first().map_or(0, Vec::len);
        let mut next = self.shares.clone();
        for n in 0..n_count {
            let top = (0..k_count)
                .map(|k| snap.marginals[k][n])
                .fold(0.0, f64::max);
            if !(top > 0.0) {
                continue;
            }
            let mut sum = 0.0;
            for k in 0..k_count {
                let v = self.shares[k][n] * (snap.marginals[k][n] / top).powf(exponent);
                next[k][n] = v;
                sum += v;
            }
            let mut resum = 0.0;
            for row in next.iter_mut() {
                row[n] = (row[n] / sum).max(SHARE_FLOOR);
                resum += row[n];
            }
            for row in next.iter_mut() {
                row[n] /= resum;
            }
        }
        next
    }

    /// One share update with backtracking on the exponent so the total load never drops.
    /// Returns `None` when no improving step was found.
    fn step(&mut self, t: f64, snap: &Snapshot) -> Option<Snapshot> {
        let mut exponent = self.exponent;
        for _ in 0..40 {
            let shares = self.proposal(snap, exponent);
            let mut levels = self.levels.clone();
            let cand = evaluate_shares(&self.consts, &self.noise, &shares, &mut levels, t);
            if cand.total >= snap.total {
                self.shares = shares;
                self.levels = levels;
                self.exponent = (exponent * 1.25).min(MAX_EXPONENT);
                return Some(cand);
            }
            exponent *= 0.5;
        }
        self.exponent = exponent.max(1e-3);
        None
    }

    pub fn run(&mut self, t: f64, goal: Goal, opts: &SolverOptions, budget: usize) -> Outcome {
        let mut snap = self.evaluate(t);
        let mut iterations = 0;
        loop {
            let settled = snap.gap <= opts.gap_tolerance * snap.total;
            match goal {
                Goal::Converge if settled => {
                    return Outcome {
                        snapshot: snap,
                        iterations,
                        converged: true,
                    }
                }
                Goal::Decide(target)
                    if (snap.total >= target || snap.total + snap.gap < target || settled) =>
                {
                    return Outcome {
                        snapshot: snap,
                        iterations,
                        converged: settled,
                    };
                }
                _ => {}
            }
            if iterations >= budget {
                return Outcome {
                    snapshot: snap,
                    iterations,
                    converged: false,
                };
            }
            iterations += 1;
            match self.step(t, &snap) {
                Some(next) => snap = next,
                None => {
                    return Outcome {
                        snapshot: snap,
                        iterations,
                        converged: false,
                    }
                }
            }
        }
    }

    pub fn result(&self, t: f64, outcome: Outcome) -> SolveResult {
        build_result(
            &self.consts,
            &self.noise,
            &self.shares,
            t,
            outcome.snapshot,
            outcome.iterations,
            outcome.converged,
        )
    }
}

pub(crate) fn evaluate_shares(
    consts: &[WorkerConsts],
    noise: &[NoiseRow],
    shares: &[Vec<f64>],
    levels: &mut [Option<f64>],
    t: f64,
) -> Snapshot {
    let k_count = shares.len();
    let n_count = shares.first().map_or(0, Vec::len);
    let mut solutions = Vec::with_capacity(k_count);
    let mut marginals = vec![vec![0.0; n_count]; k_count];
    let mut total = 0.0;
    let mut held = 0.0;
    for k in 0..k_count {
        let sol = max_load(&consts[k], t, &shares[k], &noise[k], levels[k]);
        if sol.log_level.is_some() {
            levels[k] = sol.log_level;
        }
        for n in 0..n_count {
            let m = sol.marginal(&noise[k], n);
            marginals[k][n] = m;
            held += shares[k][n] * m;
        }
        total += sol.load;
        solutions.push(sol);
    }
    let best: f64 = (0..n_count)
        .map(|n| (0..k_count).map(|k| marginals[k][n]).fold(0.0, f64::max))
        .sum();
    Snapshot {
        solutions,
        total,
        marginals,
        gap: (best - held).max(0.0),
    }
}

pub(crate) fn build_result(
    consts: &[WorkerConsts],
    noise: &[NoiseRow],
    shares: &[Vec<f64>],
    t: f64,
    snap: Snapshot,
    iterations: usize,
    converged: bool,
) -> SolveResult {
    let k_count = shares.len();
    let n_count = shares.first().map_or(0, Vec::len);
    let mut plan = AllocationPlan::zeros(k_count, n_count);
    plan.assignment = shares.to_vec();
    plan.latency = t;
    let mut effective_rates = vec![vec![0.0; n_count]; k_count];
    let mut phi = Vec::with_capacity(k_count);
    for k in 0..k_count {
        let sol = &snap.solutions[k];
        let c = &consts[k];
        for n in 0..n_count {
            let r = sol.rate(c, &noise[k], n);
            plan.rates[k][n] = r;
            let rt = shares[k][n] * r;
            effective_rates[k][n] = rt;
            plan.subcarrier_loads[k][n] = if sol.load > 0.0 {
                rt * sol.upload_time / c.bits
            } else {
                0.0
            };
        }
        plan.worker_loads[k] = sol.load;
        phi.push(1.0 / sol.upload_time);
    }
    let mu = (0..n_count)
        .map(|n| {
            -(0..k_count)
                .map(|k| snap.marginals[k][n])
                .fold(0.0, f64::max)
        })
        .collect();
    let duals = DualState {
        lambda: snap.solutions.iter().map(|s| s.lambda).collect(),
        nu: snap.solutions.iter().map(|s| s.nu).collect(),
        mu,
        phi,
        effective_rates,
    };
    let achieved = snap.total;
    SolveResult {
        plan,
        duals,
        achieved_model_size: achieved,
        iterations,
        converged,
        duality_gap: if achieved > 0.0 {
            snap.gap / achieved
        } else {
            0.0
        },
    }
}
