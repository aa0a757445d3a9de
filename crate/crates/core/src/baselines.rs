//! Comparison schemes: compute-proportional loads, and greedy subcarrier assignment for
//! federated learning where every worker uploads the whole model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::Scenario;
use crate::solver::relaxed::{build_result, evaluate_shares};
use crate::solver::rounding::{argmax_assignment, fixed_load_result};
use crate::solver::worker::{min_latency_for_load, noise_rows, NoiseRow, WorkerConsts};
use crate::solver::{
    bisect_latency, latency_lower_bound, resolve_with_fixed_loads, SolveResult, SolverOptions,
};

/// Allocation schemes the crate can compare.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    Support,
    Baseline,
    GreedyFeel,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Support, Scheme::Baseline, Scheme::GreedyFeel];

    pub fn tag(self) -> &'static str {
        match self {
            Scheme::Support => "support",
            Scheme::Baseline => "baseline",
            Scheme::GreedyFeel => "greedy-feel",
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "support" => Ok(Scheme::Support),
            "baseline" => Ok(Scheme::Baseline),
            "greedy-feel" => Ok(Scheme::GreedyFeel),
            other => Err(Error::validation(
                "scheme",
                format!("unknown scheme `{other}` (expected support, baseline or greedy-feel)"),
            )),
        }
    }
}

/// Splits `model_size` in proportion to compute speed, in whole parameters. The remainder
/// after flooring goes to the largest fractional parts, ties to the lower index.
pub fn proportional_loads(scenario: &Scenario, model_size: u64) -> Vec<f64> {
    let speed: f64 = scenario.workers.iter().map(|w| w.compute_speed).sum();
    let exact: Vec<f64> = scenario
        .workers
        .iter()
        .map(|w| model_size as f64 * w.compute_speed / speed)
        .collect();
    let mut loads: Vec<f64> = exact.iter().map(|x| x.floor()).collect();
    let assigned: f64 = loads.iter().sum();
    let mut order: Vec<usize> = (0..loads.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - loads[a];
        let fb = exact[b] - loads[b];
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let remainder = (model_size as f64 - assigned).round().max(0.0) as usize;
    for &k in order.iter().cycle().take(remainder) {
        loads[k] += 1.0;
    }
    loads
}

// Sharpness range of the soft minimum over load ratios. Sharpness grows each time the
// search settles at the current value.
const SOFTMIN_START: f64 = 10.0;
const SOFTMIN_MAX: f64 = 4e4;
// Share updates per feasibility decision; undecided latencies count as infeasible.
const GUIDE_ITERATIONS: usize = 300;

struct FixedLoadSearch<'a> {
    consts: Vec<WorkerConsts>,
    noise: Vec<NoiseRow>,
    loads: &'a [f64],
    shares: Vec<Vec<f64>>,
    levels: Vec<Option<f64>>,
}

enum Verdict {
    Feasible,
    Infeasible,
}

struct SoftMin {
    value: f64,
    worst: f64,
    // d value / d load_k
    weights: Vec<f64>,
}

impl<'a> FixedLoadSearch<'a> {
    fn new(scenario: &Scenario, loads: &'a [f64]) -> Self {
        let k_count = scenario.num_workers();
        let n_count = scenario.num_subcarriers();
        let loaded = loads.iter().filter(|&&l| l > 0.0).count().max(1);
        let shares = (0..k_count)
            .map(|k| {
                let v = if loads[k] > 0.0 {
                    1.0 / loaded as f64
                } else {
                    0.0
                };
                vec![v; n_count]
            })
            .collect();
        FixedLoadSearch {
            consts: (0..k_count)
                .map(|k| WorkerConsts::new(scenario, k))
                .collect(),
            noise: noise_rows(scenario),
            loads,
            shares,
            levels: vec![None; k_count],
        }
    }

    // -(1/b) ln sum_k exp(-b V_k / L_k) over loaded workers, concave in the shares.
    fn softmin(&self, capacity: &[f64], b: f64) -> SoftMin {
        let ratios: Vec<Option<f64>> = capacity
            .iter()
            .zip(self.loads)
            .map(|(&v, &l)| (l > 0.0).then(|| v / l))
            .collect();
        let worst = ratios
            .iter()
            .flatten()
            .copied()
            .fold(f64::INFINITY, f64::min);
        let mut sum = 0.0;
        let mut weights = vec![0.0; capacity.len()];
        for (k, r) in ratios.iter().enumerate() {
            if let Some(r) = r {
                let e = (-b * (r - worst)).exp();
                weights[k] = e;
                sum += e;
            }
        }
        for (k, w) in weights.iter_mut().enumerate() {
            if self.loads[k] > 0.0 {
                *w /= sum * self.loads[k];
            }
        }
        SoftMin {
            value: worst - sum.ln() / b,
            worst,
            weights,
        }
    }

    fn proposal(&self, marginals: &[Vec<f64>], weights: &[f64], exponent: f64) -> Vec<Vec<f64>> {
        let k_count = self.shares.len();
        let n_count = self.shares.first().map_or(0, Vec::len);
        let mut next = self.shares.clone();
        for n in 0..n_count {
            let top = (0..k_count)
                .map(|k| weights[k] * marginals[k][n])
                .fold(0.0, f64::max);
            if !(top > 0.0) {
                continue;
            }
            let mut sum = 0.0;
            for k in 0..k_count {
                let v = self.shares[k][n] * (weights[k] * marginals[k][n] / top).powf(exponent);
                next[k][n] = v;
                sum += v;
            }
            for k in 0..k_count {
                let floor = if self.loads[k] > 0.0 { 1e-30 } else { 0.0 };
                next[k][n] = (next[k][n] / sum).max(floor);
            }
            let resum: f64 = (0..k_count).map(|k| next[k][n]).sum();
            for row in next.iter_mut() {
                row[n] /= resum;
            }
        }
        next
    }

    // Decides whether shares exist that let every worker finish its load within `t`, by
    // ascending the soft minimum of the load ratios. The Frank-Wolfe gap of the soft
    // minimum plus its smoothing error bounds the best worst-case ratio from above.
    fn decide(&mut self, t: f64, opts: &SolverOptions) -> Verdict {
        let k_count = self.shares.len();
        let n_count = self.shares.first().map_or(0, Vec::len);
        let mut sharpness = SOFTMIN_START;
        let mut exponent = opts.response_exponent;
        let mut snap =
            evaluate_shares(&self.consts, &self.noise, &self.shares, &mut self.levels, t);
        for _ in 0..opts.max_iterations.min(GUIDE_ITERATIONS) {
            let capacity: Vec<f64> = snap.solutions.iter().map(|s| s.load).collect();
            let soft = self.softmin(&capacity, sharpness);
            if soft.worst >= 1.0 {
                return Verdict::Feasible;
            }
            let mut best = 0.0;
            let mut held = 0.0;
            for n in 0..n_count {
                let mut top: f64 = 0.0;
                for k in 0..k_count {
                    let m = soft.weights[k] * snap.marginals[k][n];
                    top = top.max(m);
                    held += m * self.shares[k][n];
                }
                best += top;
            }
            let gap = (best - held).max(0.0);
            // The soft-min weights sum to one against the loads, so the weighted ratio
            // sum plus the gap bounds every achievable worst-case ratio.
            let weighted: f64 = (0..k_count).map(|k| soft.weights[k] * capacity[k]).sum();
            if weighted + gap < 1.0 {
                return Verdict::Infeasible;
            }
            if gap <= 1e-3 * soft.value.abs() {
                if sharpness >= SOFTMIN_MAX {
                    return Verdict::Infeasible;
                }
                sharpness *= 4.0;
                continue;
            }

            let mut accepted = false;
            for _ in 0..30 {
                let next = self.proposal(&snap.marginals, &soft.weights, exponent);
                let mut levels = self.levels.clone();
                let cand = evaluate_shares(&self.consts, &self.noise, &next, &mut levels, t);
                let cap: Vec<f64> = cand.solutions.iter().map(|s| s.load).collect();
                if self.softmin(&cap, sharpness).value >= soft.value {
                    self.shares = next;
                    self.levels = levels;
                    snap = cand;
                    exponent = (exponent * 1.25).min(4.0);
                    accepted = true;
                    break;
                }
                exponent *= 0.5;
            }
            if !accepted {
                if sharpness >= SOFTMIN_MAX {
                    return Verdict::Infeasible;
                }
                sharpness *= 4.0;
                exponent = opts.response_exponent;
            }
        }
        Verdict::Infeasible
    }
}

/// Relaxed minimum latency when every worker's load is fixed in advance.
pub fn fixed_load_min_latency(
    scenario: &Scenario,
    loads: &[f64],
    opts: &SolverOptions,
) -> Result<SolveResult> {
    opts.validate()?;
    if loads.len() != scenario.num_workers() {
        return Err(Error::Dimension(format!(
            "expected {} loads",
            scenario.num_workers()
        )));
    }
    let total: f64 = loads.iter().sum();
    let mut search = FixedLoadSearch::new(scenario, loads);
    let lower = loads
        .iter()
        .zip(&scenario.workers)
        .map(|(&l, w)| l / w.compute_speed)
        .fold(latency_lower_bound(scenario, total), f64::max);
    // The relaxed plan only guides the rounding; the final latency comes from the exact
    // fixed-load re-solve, so a coarser bracket is enough here.
    let guide = SolverOptions {
        latency_tolerance: opts.latency_tolerance.max(1e-3),
        ..opts.clone()
    };
    let mut certified = None;
    let t = bisect_latency(lower, &guide, |t| match search.decide(t, opts) {
        Verdict::Feasible => {
            certified = Some(search.shares.clone());
            true
        }
        Verdict::Infeasible => false,
    })?;
    let shares = certified.unwrap_or_else(|| search.shares.clone());
    let mut levels = vec![None; loads.len()];
    let snap = evaluate_shares(&search.consts, &search.noise, &shares, &mut levels, t);
    let capacity = build_result(&search.consts, &search.noise, &shares, t, snap, 0, true);
    // Each worker uploads only its own load; subcarrier loads follow the capacity split.
    let mut result = fixed_load_result(scenario, &shares, loads, t);
    result.plan.subcarrier_loads = capacity
        .plan
        .subcarrier_loads
        .iter()
        .zip(loads)
        .zip(&capacity.plan.worker_loads)
        .map(|((row, &l), &cap)| {
            row.iter()
                .map(|&x| if cap > 0.0 { x * l / cap } else { 0.0 })
                .collect()
        })
        .collect();
    result.plan.rates = capacity.plan.rates;
    result.duals = capacity.duals;
    Ok(result)
}

/// Every loaded worker keeps at least one subcarrier: a worker left empty takes the
/// subcarrier it valued most from an owner holding two or more.
fn repair_assignment(assignment: &mut [Vec<f64>], loads: &[f64], relaxed: &[Vec<f64>]) {
    let k_count = assignment.len();
    let n_count = assignment.first().map_or(0, Vec::len);
    for k in 0..k_count {
        if loads[k] <= 0.0 || assignment[k].contains(&1.0) {
            continue;
        }
        let owner = |n: usize, a: &[Vec<f64>]| (0..k_count).find(|&j| a[j][n] == 1.0).unwrap();
        let mut best: Option<usize> = None;
        for n in 0..n_count {
            let o = owner(n, assignment);
            let spare = assignment[o].iter().filter(|&&c| c == 1.0).count() > 1;
            if spare && best.is_none_or(|b| relaxed[k][n] > relaxed[k][b]) {
                best = Some(n);
            }
        }
        if let Some(n) = best {
            let o = owner(n, assignment);
            assignment[o][n] = 0.0;
            assignment[k][n] = 1.0;
        }
    }
}

// Candidate subcarriers examined per improvement step, best channels of the slowest
// worker first.
const MOVE_CANDIDATES: usize = 12;

/// Moves subcarriers to the slowest worker while that lowers the round latency. A move
/// never leaves a loaded worker without subcarriers.
fn improve_assignment(scenario: &Scenario, assignment: &mut [Vec<f64>], loads: &[f64]) {
    let k_count = assignment.len();
    let n_count = assignment.first().map_or(0, Vec::len);
    let consts: Vec<WorkerConsts> = (0..k_count)
        .map(|k| WorkerConsts::new(scenario, k))
        .collect();
    let noise = noise_rows(scenario);
    let latency_of =
        |k: usize, row: &[f64]| min_latency_for_load(&consts[k], loads[k], row, &noise[k]);
    let mut latency: Vec<f64> = (0..k_count)
        .map(|k| latency_of(k, &assignment[k]))
        .collect();
    let owner_of = |a: &[Vec<f64>], n: usize| (0..k_count).find(|&j| a[j][n] == 1.0).unwrap();
    for _ in 0..(4 * n_count * k_count) {
        let mut slowest = 0;
        for k in 1..k_count {
            if latency[k] > latency[slowest] {
                slowest = k;
            }
        }
        let current = latency[slowest];
        let mut candidates: Vec<usize> = (0..n_count)
            .filter(|&n| assignment[slowest][n] == 0.0)
            .filter(|&n| {
                let o = owner_of(assignment, n);
                loads[o] <= 0.0 || assignment[o].iter().filter(|&&c| c == 1.0).count() > 1
            })
            .collect();
        candidates.sort_by(|&a, &b| {
            noise[slowest].levels[a]
                .total_cmp(&noise[slowest].levels[b])
                .then(a.cmp(&b))
        });
        let mut best: Option<(usize, f64, f64)> = None;
        for &n in candidates.iter().take(MOVE_CANDIDATES) {
            let o = owner_of(assignment, n);
            let mut gain_row = assignment[slowest].clone();
            gain_row[n] = 1.0;
            let t_gain = latency_of(slowest, &gain_row);
            let mut loss_row = assignment[o].clone();
            loss_row[n] = 0.0;
            let t_loss = latency_of(o, &loss_row);
            let worst = t_gain.max(t_loss);
            if worst < current * (1.0 - 1e-9) && best.is_none_or(|(_, w, _)| worst < w) {
                best = Some((n, worst, t_loss));
            }
        }
        let Some((n, _, t_loss)) = best else {
            break;
        };
        let o = owner_of(assignment, n);
        assignment[o][n] = 0.0;
        assignment[slowest][n] = 1.0;
        latency[o] = t_loss;
        latency[slowest] = latency_of(slowest, &assignment[slowest]);
    }
}

/// Loads proportional to compute speed; subcarriers, rates and powers optimized for them.
pub fn proportional_baseline(
    scenario: &Scenario,
    model_size: u64,
    opts: &SolverOptions,
) -> Result<SolveResult> {
    if model_size == 0 {
        return Err(Error::validation("model_size", "must be at least 1"));
    }
    let loads = proportional_loads(scenario, model_size);
    let relaxed = fixed_load_min_latency(scenario, &loads, opts)?;
    let mut assignment = argmax_assignment(&relaxed.plan);
    repair_assignment(&mut assignment, &loads, &relaxed.plan.assignment);
    improve_assignment(scenario, &mut assignment, &loads);
    resolve_with_fixed_loads(scenario, &assignment, &loads)
}

/// Federated-learning comparison: every worker updates and uploads all `model_size`
/// parameters. Subcarriers are handed out in index order, each to the worker whose
/// current minimum latency is the largest (workers without subcarriers count as
/// infinitely slow, ties go to the lower index).
pub fn greedy_feel(scenario: &Scenario, model_size: u64) -> Result<SolveResult> {
    if model_size == 0 {
        return Err(Error::validation("model_size", "must be at least 1"));
    }
    let k_count = scenario.num_workers();
    let n_count = scenario.num_subcarriers();
    let load = model_size as f64;
    let consts: Vec<WorkerConsts> = (0..k_count)
        .map(|k| WorkerConsts::new(scenario, k))
        .collect();
    let noise = noise_rows(scenario);
    let mut assignment = vec![vec![0.0; n_count]; k_count];
    let mut latency = vec![f64::INFINITY; k_count];
    for n in 0..n_count {
        let mut slowest = 0;
        for k in 1..k_count {
            if latency[k] > latency[slowest] {
                slowest = k;
            }
        }
        assignment[slowest][n] = 1.0;
        let updated = min_latency_for_load(
            &consts[slowest],
            load,
            &assignment[slowest],
            &noise[slowest],
        );
        // Equal when the new subcarrier sits below the worker's water level and stays unused.
        debug_assert!(updated <= latency[slowest]);
        latency[slowest] = updated;
    }
    let t = latency
        .iter()
        .copied()
        .fold(scenario.latency_floor(), f64::max);
    let loads = vec![load; k_count];
    Ok(fixed_load_result(scenario, &assignment, &loads, t))
}

/// Runs one scheme end to end and returns its binary plan.
pub fn run_scheme(
    scheme: Scheme,
    scenario: &Scenario,
    opts: &SolverOptions,
) -> Result<SolveResult> {
    match scheme {
        Scheme::Support => Ok(crate::solver::solve(scenario, opts)?.rounded),
        Scheme::Baseline => proportional_baseline(scenario, scenario.config.model_size, opts),
        Scheme::GreedyFeel => greedy_feel(scenario, scenario.config.model_size),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost_model::validate_plan;
    use crate::scenario::{
        generate_scenario, ChannelMatrix, DistributionSpec, SystemConfig, WorkerProfile,
    };

    fn identical(k: usize, n: usize) -> Scenario {
        let cfg = SystemConfig::experiment(n);
        let w = WorkerProfile {
            compute_speed: 5e5,
            power_factor: 1e-16,
            power_cap: 8.0,
        };
        Scenario::new(
            cfg,
            vec![w; k],
            ChannelMatrix::new(vec![vec![1e-3; n]; k]),
            0,
        )
        .unwrap()
    }

    #[test]
    fn identical_workers_get_equal_loads() {
        let s = identical(4, 8);
        let loads = proportional_loads(&s, 1_000_000);
        assert!(loads.iter().all(|&l| l == 250_000.0));
        let loads = proportional_loads(&s, 10);
        assert_eq!(loads, vec![3.0, 3.0, 2.0, 2.0]);
    }

    #[test]
    fn slow_worker_gets_little_load() {
        let mut s = identical(3, 6);
        s.workers[2].compute_speed = 1.0;
        let loads = proportional_loads(&s, 1_000_000);
        assert!(loads[2] <= 1.0);
    }

    #[test]
    fn greedy_single_worker_takes_everything() {
        let s = identical(1, 5);
        let r = greedy_feel(&s, s.config.model_size).unwrap();
        assert!(r.plan.assignment[0].iter().all(|&c| c == 1.0));
        assert!(validate_plan(&r.plan, &s, None).unwrap().feasible);
    }

    #[test]
    fn greedy_with_more_workers_than_subcarriers_is_unbounded() {
        let s = identical(3, 2);
        let r = greedy_feel(&s, 1000).unwrap();
        assert!(r.plan.latency.is_infinite());
    }

    #[test]
    fn baseline_plan_is_feasible_and_dominated() {
        let cfg = SystemConfig::experiment(16);
        let s = generate_scenario(6, &cfg, &DistributionSpec::default(), 3).unwrap();
        let opts = SolverOptions::default();
        let base = proportional_baseline(&s, cfg.model_size, &opts).unwrap();
        let report = validate_plan(&base.plan, &s, None).unwrap();
        assert!(report.feasible, "{report:?}");
        let support = crate::solver::solve(&s, &opts).unwrap();
        assert!(support.relaxed.plan.latency <= base.plan.latency * (1.0 + 1e-6));
        let feel = greedy_feel(&s, cfg.model_size).unwrap();
        assert!(validate_plan(&feel.plan, &s, None).unwrap().feasible);
    }

    #[test]
    fn scheme_tags_round_trip() {
        for s in Scheme::ALL {
            assert_eq!(s.tag().parse::<Scheme>().unwrap(), s);
        }
        assert!("feel".parse::<Scheme>().is_err());
    }
}
