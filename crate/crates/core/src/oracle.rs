//! Exhaustive reference solutions for tiny instances, and a numeric convexity probe for
//! the transformed fixed-latency problem.
//!
//! Nothing here reuses the solver. For a fixed binary assignment and a fixed load a
//! worker's best latency is found by bisection on `T`; at each `T` the minimum-energy
//! rates for the required throughput come from exact water-filling over its subcarriers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cost_model::AllocationPlan;
use crate::error::{Error, Result};
use crate::scenario::{ChannelMatrix, Scenario, SystemConfig, WorkerProfile};

pub const MAX_WORKERS: usize = 3;
pub const MAX_SUBCARRIERS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleGrids {
    /// Initial number of load steps per worker; the whole model is split in units of
    /// `L / load_points`.
    pub load_points: usize,
    /// Refinement stops here even if not yet stable.
    pub max_load_points: usize,
    /// Relative change between two refinements regarded as stable.
    pub stability: f64,
    /// Relative tolerance of the per-worker latency bisection.
    pub latency_tolerance: f64,
}

impl Default for OracleGrids {
    fn default() -> Self {
        OracleGrids {
            load_points: 64,
            max_load_points: 1024,
            stability: 0.01,
            latency_tolerance: 1e-10,
        }
    }
}

impl OracleGrids {
    fn validate(&self) -> Result<()> {
        if self.load_points < 16 || self.max_load_points < self.load_points {
            return Err(Error::validation(
                "grids.load_points",
                "need 16 <= load_points <= max",
            ));
        }
        if !(self.stability > 0.0) || !(self.latency_tolerance > 0.0) {
            return Err(Error::validation("grids", "tolerances must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSolution {
    pub latency: f64,
    pub witness: AllocationPlan,
    /// Load grid size of the returned value.
    pub load_points: usize,
    /// Best latency at each grid size tried, coarsest first.
    pub refinements: Vec<f64>,
}

/// Minimum round latency over every binary assignment and every load split on the grid,
/// refining the grid until two successive values agree to `grids.stability`.
pub fn brute_force_min_latency(
    scenario: &Scenario,
    model_size: f64,
    grids: &OracleGrids,
) -> Result<OracleSolution> {
    grids.validate()?;
    let k_count = scenario.num_workers();
    let n_count = scenario.num_subcarriers();
    if k_count > MAX_WORKERS || n_count > MAX_SUBCARRIERS {
        return Err(Error::EnumerationBound {
            workers: k_count,
            subcarriers: n_count,
        });
    }
    if !(model_size > 0.0) {
        return Err(Error::validation("model_size", "must be positive"));
    }
    let mut points = grids.load_points;
    let mut refinements = Vec::new();
    let mut best = search_grid(scenario, model_size, points, grids.latency_tolerance)?;
    refinements.push(best.latency);
    while points * 2 <= grids.max_load_points {
        points *= 2;
        let finer = search_grid(scenario, model_size, points, grids.latency_tolerance)?;
        refinements.push(finer.latency);
        let change = (best.latency - finer.latency).abs() / finer.latency;
        best = finer;
        if change <= grids.stability {
            break;
        }
    }
    Ok(OracleSolution {
        latency: best.latency,
        witness: best.witness,
        load_points: points,
        refinements,
    })
}

struct GridBest {
    latency: f64,
    witness: AllocationPlan,
}

fn search_grid(scenario: &Scenario, model_size: f64, points: usize, tol: f64) -> Result<GridBest> {
    let k_count = scenario.num_workers();
    let n_count = scenario.num_subcarriers();
    let unit = model_size / points as f64;
    let mut best: Option<(f64, Vec<usize>, Vec<usize>)> = None;
    let assignments = (k_count as u64).pow(n_count as u32);
    for code in 0..assignments {
        let owner = decode(code, k_count, n_count);
        let sets: Vec<Vec<usize>> = (0..k_count)
            .map(|k| (0..n_count).filter(|&n| owner[n] == k).collect())
            .collect();
        // Latency of every worker at every grid load, then the best split.
        let table: Vec<Vec<f64>> = (0..k_count)
            .map(|k| {
                (0..=points)
                    .map(|u| worker_min_latency(scenario, k, &sets[k], u as f64 * unit, tol))
                    .collect()
            })
            .collect();
        let mut units = vec![0; k_count];
        split_search(
            &table,
            points,
            0,
            &mut units,
            f64::INFINITY,
            &mut |t, split| {
                if best.as_ref().is_none_or(|b| t < b.0) {
                    best = Some((t, owner.clone(), split.to_vec()));
                }
            },
        );
    }
    let (latency, owner, units) = best
        .filter(|b| b.0.is_finite())
        .ok_or_else(|| Error::InfeasibleTarget("no assignment reaches the model size".into()))?;
    let witness = build_witness(scenario, &owner, &units, unit, latency, tol);
    Ok(GridBest { latency, witness })
}

fn decode(mut code: u64, k_count: usize, n_count: usize) -> Vec<usize> {
    (0..n_count)
        .map(|_| {
            let k = (code % k_count as u64) as usize;
            code /= k_count as u64;
            k
        })
        .collect()
}

/// Enumerates splits of `remaining` units over workers `k..`, reporting the round latency.
fn split_search(
    table: &[Vec<f64>],
    remaining: usize,
    k: usize,
    units: &mut Vec<usize>,
    current: f64,
    report: &mut impl FnMut(f64, &[usize]),
) {
    let last = k + 1 == table.len();
    let range = if last {
        remaining..=remaining
    } else {
        0..=remaining
    };
    for u in range {
        let t = table[k][u];
        let worst = if current.is_finite() {
            current.max(t)
        } else {
            t
        };
        if !worst.is_finite() {
            continue;
        }
        units[k] = u;
        if last {
            report(worst, units);
        } else {
            split_search(table, remaining - u, k + 1, units, worst, report);
        }
    }
}

/// Water-filling over `gains`: the water level `w` at which the subcarriers carry
/// `bits_per_second` in total, and the sum of powers `(w - sigma^2/h)+`.
fn water_fill(gains: &[f64], bandwidth: f64, noise: f64, bits_per_second: f64) -> (f64, f64) {
    let mut floors: Vec<f64> = gains.iter().map(|&h| noise / h).collect();
    floors.sort_by(f64::total_cmp);
    let mut log_sum = 0.0;
    let mut level = floors[0];
    for m in 1..=floors.len() {
        log_sum += floors[m - 1].log2();
        let candidate = ((bits_per_second / bandwidth + log_sum) / m as f64).exp2();
        let next = floors.get(m).copied().unwrap_or(f64::INFINITY);
        if candidate <= next {
            level = candidate.max(floors[m - 1]);
            break;
        }
    }
    let power = floors.iter().map(|&a| (level - a).max(0.0)).sum();
    (level, power)
}

fn energy_at(scenario: &Scenario, k: usize, set: &[usize], load: f64, t: f64) -> f64 {
    let w = &scenario.workers[k];
    let cfg = &scenario.config;
    let upload = t - load / w.compute_speed;
    if !(upload > 0.0) {
        return f64::INFINITY;
    }
    let gains: Vec<f64> = set.iter().map(|&n| scenario.channels.gain(k, n)).collect();
    let needed = load * cfg.bits_per_parameter / upload;
    let (_, power) = water_fill(&gains, cfg.subcarrier_bandwidth, cfg.noise_power, needed);
    upload * power + w.power_factor * w.compute_speed * w.compute_speed * load + cfg.circuit_energy
}

fn worker_min_latency(scenario: &Scenario, k: usize, set: &[usize], load: f64, tol: f64) -> f64 {
    if load <= 0.0 {
        return 0.0;
    }
    if set.is_empty() {
        return f64::INFINITY;
    }
    let cap = scenario.workers[k].power_cap;
    let ok = |t: f64| energy_at(scenario, k, set, load, t) <= cap * t;
    let mut lo = load / scenario.workers[k].compute_speed;
    let mut hi = 2.0 * lo;
    let mut steps = 0;
    while !ok(hi) {
        lo = hi;
        hi *= 2.0;
        steps += 1;
        if steps > 200 {
            return f64::INFINITY;
        }
    }
    while hi - lo > tol * hi {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

fn build_witness(
    scenario: &Scenario,
    owner: &[usize],
    units: &[usize],
    unit: f64,
    latency: f64,
    tol: f64,
) -> AllocationPlan {
    let cfg = &scenario.config;
    let k_count = scenario.num_workers();
    let n_count = scenario.num_subcarriers();
    let mut plan = AllocationPlan::zeros(k_count, n_count);
    plan.latency = latency;
    for n in 0..n_count {
        plan.assignment[owner[n]][n] = 1.0;
    }
    for k in 0..k_count {
        let load = units[k] as f64 * unit;
        plan.worker_loads[k] = load;
        let set: Vec<usize> = (0..n_count).filter(|&n| owner[n] == k).collect();
        if load <= 0.0 {
            continue;
        }
        let t = worker_min_latency(scenario, k, &set, load, tol);
        let upload = t - load / scenario.workers[k].compute_speed;
        let gains: Vec<f64> = set.iter().map(|&n| scenario.channels.gain(k, n)).collect();
        let needed = load * cfg.bits_per_parameter / upload;
        let (level, _) = water_fill(&gains, cfg.subcarrier_bandwidth, cfg.noise_power, needed);
        for &n in &set {
            let snr = level * scenario.channels.gain(k, n) / cfg.noise_power;
            let rate = if snr > 1.0 {
                cfg.subcarrier_bandwidth * snr.log2()
            } else {
                0.0
            };
            plan.rates[k][n] = rate;
            plan.subcarrier_loads[k][n] = rate * upload / cfg.bits_per_parameter;
        }
        // Water-filling meets the throughput up to rounding; pin the total to the load.
        let uploaded: f64 = plan.subcarrier_loads[k].iter().sum();
        if uploaded > 0.0 {
            for l in plan.subcarrier_loads[k].iter_mut() {
                *l *= load / uploaded;
            }
        }
    }
    plan
}

/// Two workers, two subcarriers, each subcarrier better for a different worker.
pub fn reference_scenario() -> Scenario {
    let config = SystemConfig {
        num_subcarriers: 2,
        subcarrier_bandwidth: 312_500.0,
        noise_power: 3.125e-4,
        bits_per_parameter: 32.0,
        circuit_energy: 0.0,
        model_size: 1_000_000,
    };
    let workers = vec![
        WorkerProfile {
            compute_speed: 1e6,
            power_factor: 1e-16,
            power_cap: 8.0,
        },
        WorkerProfile {
            compute_speed: 5e5,
            power_factor: 2e-16,
            power_cap: 8.0,
        },
    ];
    let channels = ChannelMatrix::new(vec![vec![1e-3, 2e-3], vec![2e-3, 1e-3]]);
    Scenario::new(config, workers, channels, 0).expect("reference scenario is valid")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexityReport {
    pub trials: usize,
    pub feasibility_violations: usize,
    pub objective_violations: usize,
    /// Largest normalized violation seen.
    pub worst: f64,
}

impl ConvexityReport {
    pub fn violations(&self) -> usize {
        self.feasibility_violations + self.objective_violations
    }
}

/// Which energy constraint the probe samples under.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnergySense {
    /// The real constraint, energy at most the budget.
    AtMost,
    /// Reversed inequality; its feasible set is not convex. Used as a negative control.
    AtLeast,
}

/// A point `(C, phi, R~)` of the transformed fixed-latency problem.
#[derive(Debug, Clone)]
struct ProbePoint {
    shares: Vec<Vec<f64>>,
    phi: Vec<f64>,
    rates: Vec<Vec<f64>>,
}

impl ProbePoint {
    fn mix(&self, other: &ProbePoint, theta: f64) -> ProbePoint {
        let mix = |a: f64, b: f64| theta * a + (1.0 - theta) * b;
        let mix2 = |a: &[Vec<f64>], b: &[Vec<f64>]| -> Vec<Vec<f64>> {
            a.iter()
                .zip(b)
                .map(|(r, s)| r.iter().zip(s).map(|(&x, &y)| mix(x, y)).collect())
                .collect()
        };
        ProbePoint {
            shares: mix2(&self.shares, &other.shares),
            phi: self
                .phi
                .iter()
                .zip(&other.phi)
                .map(|(&a, &b)| mix(a, b))
                .collect(),
            rates: mix2(&self.rates, &other.rates),
        }
    }
}

/// Samples pairs of feasible points at latency `latency` and checks that random convex
/// combinations stay feasible and that the objective along the segment is at least the
/// interpolated one. Violations are counted at relative tolerance 1e-9.
pub fn convexity_probe(
    scenario: &Scenario,
    latency: f64,
    trials: usize,
    seed: u64,
    sense: EnergySense,
) -> Result<ConvexityReport> {
    if trials < 1 {
        return Err(Error::validation("trials", "must be positive"));
    }
    if !(latency > scenario.latency_floor()) {
        return Err(Error::InfeasibleLatency {
            latency,
            floor: scenario.latency_floor(),
        });
    }
    const TOL: f64 = 1e-9;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = ConvexityReport {
        trials,
        feasibility_violations: 0,
        objective_violations: 0,
        worst: 0.0,
    };
    for _ in 0..trials {
        let a = sample_point(scenario, latency, sense, &mut rng);
        let b = if rng.gen_bool(0.05) {
            a.clone()
        } else {
            sample_point(scenario, latency, sense, &mut rng)
        };
        let theta: f64 = rng.gen();
        let m = a.mix(&b, theta);
        let infeasibility = constraint_violation(scenario, latency, &m, sense);
        if infeasibility > TOL {
            report.feasibility_violations += 1;
        }
        let (fa, fb, fm) = (
            objective(scenario, latency, &a),
            objective(scenario, latency, &b),
            objective(scenario, latency, &m),
        );
        let interpolated = theta * fa + (1.0 - theta) * fb;
        let shortfall = (interpolated - fm) / interpolated.abs().max(1.0);
        if shortfall > TOL {
            report.objective_violations += 1;
        }
        report.worst = report.worst.max(infeasibility).max(shortfall);
    }
    Ok(report)
}

fn objective(scenario: &Scenario, t: f64, p: &ProbePoint) -> f64 {
    scenario
        .workers
        .iter()
        .zip(&p.phi)
        .map(|(w, &phi)| w.compute_speed * (t - 1.0 / phi))
        .sum()
}

fn upload_energy(scenario: &Scenario, k: usize, shares: &[f64], rates: &[f64]) -> f64 {
    let cfg = &scenario.config;
    shares
        .iter()
        .zip(rates)
        .enumerate()
        .map(|(n, (&c, &r))| {
            if c <= 0.0 {
                0.0
            } else {
                let h = scenario.channels.gain(k, n);
                c * cfg.noise_power
                    * (r / (cfg.subcarrier_bandwidth * c) * std::f64::consts::LN_2).exp_m1()
                    / h
            }
        })
        .sum()
}

/// Largest normalized constraint violation of a point; 0 when feasible.
fn constraint_violation(scenario: &Scenario, t: f64, p: &ProbePoint, sense: EnergySense) -> f64 {
    let cfg = &scenario.config;
    let mut worst: f64 = 0.0;
    for n in 0..scenario.num_subcarriers() {
        let sum: f64 = p.shares.iter().map(|r| r[n]).sum();
        worst = worst.max((sum - 1.0).abs());
        for row in &p.shares {
            worst = worst.max(-row[n]);
        }
    }
    for (k, w) in scenario.workers.iter().enumerate() {
        let f = w.compute_speed;
        let phi = p.phi[k];
        worst = worst.max((1.0 / t - phi) * t);
        let uploaded: f64 = p.rates[k].iter().sum::<f64>() / cfg.bits_per_parameter;
        let demand = f * (t * phi - 1.0);
        worst = worst.max((demand - uploaded) / uploaded.max(demand).max(1.0));
        let spent = upload_energy(scenario, k, &p.shares[k], &p.rates[k])
            + w.power_factor * f * f * f * (phi * t - 1.0);
        let budget = (w.power_cap * t - cfg.circuit_energy) * phi;
        let scale = spent.abs().max(budget.abs()).max(1e-300);
        let excess = match sense {
            EnergySense::AtMost => spent - budget,
            EnergySense::AtLeast => budget - spent,
        };
        worst = worst.max(excess / scale);
    }
    worst
}

fn sample_point(
    scenario: &Scenario,
    t: f64,
    sense: EnergySense,
    rng: &mut ChaCha8Rng,
) -> ProbePoint {
    let cfg = &scenario.config;
    let k_count = scenario.num_workers();
    let n_count = scenario.num_subcarriers();
    loop {
        let mut shares = vec![vec![0.0; n_count]; k_count];
        for n in 0..n_count {
            let raw: Vec<f64> = (0..k_count).map(|_| rng.gen::<f64>() + 1e-3).collect();
            let sum: f64 = raw.iter().sum();
            for k in 0..k_count {
                shares[k][n] = raw[k] / sum;
            }
        }
        let mut rates = vec![vec![0.0; n_count]; k_count];
        let mut phi = vec![0.0; k_count];
        let mut ok = true;
        for (k, w) in scenario.workers.iter().enumerate() {
            let spectral: f64 = rng.gen_range(0.0..8.0);
            for n in 0..n_count {
                rates[k][n] = shares[k][n] * cfg.subcarrier_bandwidth * spectral * rng.gen::<f64>();
            }
            let f = w.compute_speed;
            let e = upload_energy(scenario, k, &shares[k], &rates[k]);
            let gf3 = w.power_factor * f * f * f;
            let budget = w.power_cap * t - cfg.circuit_energy;
            // Upload throughput caps phi from above; energy is linear in phi.
            let mut phi_lo = 1.0 / t;
            let mut phi_hi = (rates[k].iter().sum::<f64>() / cfg.bits_per_parameter / f + 1.0) / t;
            // e + gf3 (phi t - 1) <= budget phi  <=>  phi (gf3 t - budget) <= gf3 - e
            let slope = gf3 * t - budget;
            let rhs = gf3 - e;
            match sense {
                EnergySense::AtMost => {
                    if slope > 0.0 {
                        phi_hi = phi_hi.min(rhs / slope);
                    } else if slope < 0.0 {
                        phi_lo = phi_lo.max(rhs / slope);
                    } else if rhs < 0.0 {
                        ok = false;
                    }
                }
                EnergySense::AtLeast => {
                    if slope > 0.0 {
                        phi_lo = phi_lo.max(rhs / slope);
                    } else if slope < 0.0 {
                        phi_hi = phi_hi.min(rhs / slope);
                    } else if rhs > 0.0 {
                        ok = false;
                    }
                }
            }
            if !(phi_lo <= phi_hi) {
                ok = false;
                break;
            }
            phi[k] = phi_lo + (phi_hi - phi_lo) * rng.gen::<f64>();
        }
        if ok {
            return ProbePoint { shares, phi, rates };
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost_model::validate_plan;

    #[test]
    fn water_fill_meets_throughput() {
        let gains = [1e-3, 2e-3, 5e-4];
        let (level, power) = water_fill(&gains, 312_500.0, 3.125e-4, 2e6);
        let carried: f64 = gains
            .iter()
            .map(|&h| 312_500.0 * (level * h / 3.125e-4).log2().max(0.0))
            .sum();
        assert!((carried - 2e6).abs() < 1e-6 * 2e6);
        assert!(power > 0.0);
    }

    #[test]
    fn witness_is_feasible() {
        let s = reference_scenario();
        let sol = brute_force_min_latency(&s, 1e6, &OracleGrids::default()).unwrap();
        let report = validate_plan(&sol.witness, &s, None).unwrap();
        assert!(report.feasible, "{report:?}");
        assert!(sol.refinements.len() >= 2);
    }

    #[test]
    fn useless_worker_gets_nothing() {
        let mut s = reference_scenario();
        s.channels = ChannelMatrix::new(vec![vec![1e-3, 2e-3], vec![1e-15, 1e-15]]);
        let sol = brute_force_min_latency(&s, 1e6, &OracleGrids::default()).unwrap();
        assert_eq!(sol.witness.worker_loads[1], 0.0);
    }

    #[test]
    fn enumeration_bound() {
        let cfg = SystemConfig::experiment(5);
        let s = crate::scenario::generate_scenario(2, &cfg, &Default::default(), 1).unwrap();
        assert!(matches!(
            brute_force_min_latency(&s, 1e5, &OracleGrids::default()),
            Err(Error::EnumerationBound { .. })
        ));
    }

    #[test]
    fn probe_passes_and_negative_control_fails() {
        let s = reference_scenario();
        let good = convexity_probe(&s, 2.0, 300, 7, EnergySense::AtMost).unwrap();
        assert_eq!(good.violations(), 0, "{good:?}");
        let bad = convexity_probe(&s, 2.0, 300, 7, EnergySense::AtLeast).unwrap();
        assert!(bad.violations() > 0);
    }
}
