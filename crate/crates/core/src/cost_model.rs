//! Latency and energy of a candidate allocation, and constraint checking.
//!
//! Subcarrier shares may be fractional while a plan is still relaxed. A share `C` is read
//! as time sharing: the worker transmits on the subcarrier a fraction `C` of the time at
//! link rate `R` (bits/s), so its throughput there is `C * R`. For binary shares all
//! formulas reduce to the usual per-subcarrier ones.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::Scenario;

/// Relative tolerance applied to every slack in [`validate_plan`].
pub const VALIDATION_TOLERANCE: f64 = 1e-6;

/// Subcarrier assignment, loads, rates and latency of one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationPlan {
    /// `C[k][n]`, share of subcarrier `n` held by worker `k`.
    pub assignment: Vec<Vec<f64>>,
    /// `L_k`, parameters updated by worker `k`.
    pub worker_loads: Vec<f64>,
    /// `L_kn`, parameters uploaded by worker `k` on subcarrier `n`.
    pub subcarrier_loads: Vec<Vec<f64>>,
    /// `R_kn`, link rate in bits/s while worker `k` transmits on subcarrier `n`.
    pub rates: Vec<Vec<f64>>,
    /// Round latency `T` in seconds.
    pub latency: f64,
}

impl AllocationPlan {
    /// All-zero plan of the given shape.
    pub fn zeros(num_workers: usize, num_subcarriers: usize) -> Self {
        AllocationPlan {
            assignment: vec![vec![0.0; num_subcarriers]; num_workers],
            worker_loads: vec![0.0; num_workers],
            subcarrier_loads: vec![vec![0.0; num_subcarriers]; num_workers],
            rates: vec![vec![0.0; num_subcarriers]; num_workers],
            latency: 0.0,
        }
    }

    pub fn num_workers(&self) -> usize {
        self.worker_loads.len()
    }

    pub fn num_subcarriers(&self) -> usize {
        self.assignment.first().map_or(0, Vec::len)
    }

    pub fn total_load(&self) -> f64 {
        self.worker_loads.iter().sum()
    }

    /// True when every share is exactly 0 or 1.
    pub fn is_binary(&self) -> bool {
        self.assignment
            .iter()
            .flatten()
            .all(|&c| c == 0.0 || c == 1.0)
    }

    /// Transmit power of worker `k` on subcarrier `n` while it is transmitting.
    pub fn transmit_power(&self, scenario: &Scenario, k: usize, n: usize) -> f64 {
        if self.assignment[k][n] <= 0.0 {
            return 0.0;
        }
        link_power(
            self.rates[k][n],
            scenario.channels.gain(k, n),
            scenario.config.subcarrier_bandwidth,
            scenario.config.noise_power,
        )
    }

    pub(crate) fn check_dims(&self, scenario: &Scenario) -> Result<()> {
        let (k, n) = (scenario.num_workers(), scenario.num_subcarriers());
        let rows_ok = |m: &Vec<Vec<f64>>| m.len() == k && m.iter().all(|r| r.len() == n);
        if self.worker_loads.len() != k
            || !rows_ok(&self.assignment)
            || !rows_ok(&self.subcarrier_loads)
            || !rows_ok(&self.rates)
        {
            return Err(Error::Dimension(format!(
                "plan does not match a {k}x{n} scenario"
            )));
        }
        Ok(())
    }
}

/// Power needed for link rate `rate` on a subcarrier with gain `gain`: `(2^{R/B} - 1) sigma^2 / h`.
pub fn link_power(rate: f64, gain: f64, bandwidth: f64, noise_power: f64) -> f64 {
    (rate / bandwidth * std::f64::consts::LN_2).exp_m1() * noise_power / gain
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkerLatency {
    pub compute: f64,
    pub per_subcarrier: Vec<f64>,
    /// Slowest subcarrier.
    pub upload: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkerEnergy {
    pub compute: f64,
    /// Transmit power on each subcarrier (0 where unassigned).
    pub per_subcarrier_power: Vec<f64>,
    pub upload: f64,
    /// Computation + upload + circuit energy.
    pub total: f64,
}

pub fn worker_latency(
    plan: &AllocationPlan,
    scenario: &Scenario,
    k: usize,
) -> Result<WorkerLatency> {
    plan.check_dims(scenario)?;
    let tau = scenario.config.bits_per_parameter;
    let compute = plan.worker_loads[k] / scenario.workers[k].compute_speed;
    let mut per_subcarrier = vec![0.0; plan.num_subcarriers()];
    for (n, t) in per_subcarrier.iter_mut().enumerate() {
        let c = plan.assignment[k][n];
        let load = plan.subcarrier_loads[k][n];
        if c <= 0.0 || load <= 0.0 {
            continue;
        }
        let rate = plan.rates[k][n];
        if rate <= 0.0 {
            return Err(Error::UndefinedLatency {
                worker: k,
                subcarrier: n,
                load,
            });
        }
        *t = load * tau / (c * rate);
    }
    let upload = per_subcarrier.iter().copied().fold(0.0, f64::max);
    Ok(WorkerLatency {
        compute,
        per_subcarrier,
        upload,
        total: compute + upload,
    })
}

pub fn worker_energy(plan: &AllocationPlan, scenario: &Scenario, k: usize) -> Result<WorkerEnergy> {
    plan.check_dims(scenario)?;
    let cfg = &scenario.config;
    let w = &scenario.workers[k];
    let compute = w.power_factor * w.compute_speed * w.compute_speed * plan.worker_loads[k];
    let mut upload = 0.0;
    let mut per_subcarrier_power = vec![0.0; plan.num_subcarriers()];
    for (n, p) in per_subcarrier_power.iter_mut().enumerate() {
        if plan.assignment[k][n] <= 0.0 {
            continue;
        }
        *p = plan.transmit_power(scenario, k, n);
        let load = plan.subcarrier_loads[k][n];
        if load > 0.0 && plan.rates[k][n] > 0.0 {
            // share * power * (load * tau / (share * rate))
            upload += *p * load * cfg.bits_per_parameter / plan.rates[k][n];
        }
    }
    Ok(WorkerEnergy {
        compute,
        per_subcarrier_power,
        upload,
        total: compute + upload + cfg.circuit_energy,
    })
}

/// Largest per-worker latency over workers that carry load.
pub fn realized_latency(plan: &AllocationPlan, scenario: &Scenario) -> Result<f64> {
    let mut t: f64 = 0.0;
    for k in 0..plan.num_workers() {
        if plan.worker_loads[k] > 0.0 {
            t = t.max(worker_latency(plan, scenario, k)?.total);
        }
    }
    Ok(t)
}

pub fn total_energy(plan: &AllocationPlan, scenario: &Scenario) -> Result<f64> {
    (0..plan.num_workers())
        .map(|k| worker_energy(plan, scenario, k).map(|e| e.total))
        .sum()
}

/// Slacks of every constraint; negative means violated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    /// C1, per subcarrier: `-|sum_k C_kn - 1|`, or the most negative share excursion.
    pub assignment: Vec<f64>,
    /// C2, per worker: `T - max_n (T_cmp + T_com_n)`.
    pub latency: Vec<f64>,
    /// C3: `sum_k L_k - L`.
    pub model_size: f64,
    /// C4, per worker: `sum_n L_kn - L_k`.
    pub upload: Vec<f64>,
    /// C5, per worker: `P_k T - E_k`.
    pub power: Vec<f64>,
    /// C_cnn, per worker: minus the distance of `L_k` to the nearest multiple of `L_sub`.
    pub granularity: Option<Vec<f64>>,
    pub feasible: bool,
    /// Largest violation, normalized by the scale of its constraint; 0 when feasible.
    pub worst_violation: f64,
}

/// Checks C1-C5 (and C_cnn when `granularity` is given). Infeasibility is reported,
/// not raised; errors only come from malformed plans.
pub fn validate_plan(
    plan: &AllocationPlan,
    scenario: &Scenario,
    granularity: Option<f64>,
) -> Result<ConstraintReport> {
    plan.check_dims(scenario)?;
    let tol = VALIDATION_TOLERANCE;
    let big_l = scenario.config.model_size as f64;
    let t = plan.latency;
    let mut worst: f64 = 0.0;
    let mut note = |violation: f64| worst = worst.max(violation);

    let mut assignment = Vec::with_capacity(plan.num_subcarriers());
    for n in 0..plan.num_subcarriers() {
        let col: Vec<f64> = plan.assignment.iter().map(|r| r[n]).collect();
        let sum: f64 = col.iter().sum();
        let excursion = col.iter().map(|&c| (-c).max(c - 1.0)).fold(0.0, f64::max);
        let slack = -((sum - 1.0).abs().max(excursion));
        note(-slack);
        assignment.push(slack);
    }

    let mut latency = Vec::with_capacity(plan.num_workers());
    let mut upload = Vec::with_capacity(plan.num_workers());
    let mut power = Vec::with_capacity(plan.num_workers());
    for k in 0..plan.num_workers() {
        let load = plan.worker_loads[k];
        if load > 0.0 {
            let lat = worker_latency(plan, scenario, k)?;
            let busiest = lat
                .per_subcarrier
                .iter()
                .zip(&plan.assignment[k])
                .filter(|(_, &c)| c > 0.0)
                .map(|(&tc, _)| lat.compute + tc)
                .fold(lat.compute, f64::max);
            let slack = t - busiest;
            note(-slack / t.max(f64::MIN_POSITIVE));
            latency.push(slack);
        } else {
            latency.push(t);
        }

        let uploaded: f64 = plan.subcarrier_loads[k]
            .iter()
            .zip(&plan.assignment[k])
            .filter(|(_, &c)| c > 0.0)
            .map(|(&l, _)| l)
            .sum();
        let slack = uploaded - load;
        note(-slack / count_scale(load));
        upload.push(slack);

        let e = worker_energy(plan, scenario, k)?.total;
        let budget = scenario.workers[k].power_cap * t;
        let slack = budget - e;
        note(-slack / budget.max(f64::MIN_POSITIVE));
        power.push(slack);
    }

    let model_size = plan.total_load() - big_l;
    note(-model_size / count_scale(big_l));

    let granularity = granularity.map(|sub| {
        plan.worker_loads
            .iter()
            .map(|&l| {
                let r = l.rem_euclid(sub);
                let slack = -r.min(sub - r);
                note(-slack / sub);
                slack
            })
            .collect()
    });

    let feasible = worst <= tol;
    Ok(ConstraintReport {
        assignment,
        latency,
        model_size,
        upload,
        power,
        granularity,
        feasible,
        worst_violation: if feasible { 0.0 } else { worst },
    })
}

// Parameter counts are integers: one missing parameter is a violation no matter how large
// the model is, so the relative tolerance is taken against one parameter unit (plus
// float round-off on large sums).
fn count_scale(reference: f64) -> f64 {
    1.0 + 1e-6 * reference.abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{ChannelMatrix, SystemConfig, WorkerProfile};

    fn scenario_2x2() -> Scenario {
        let cfg = SystemConfig {
            num_subcarriers: 2,
            subcarrier_bandwidth: 312_500.0,
            noise_power: 3.125e-4,
            bits_per_parameter: 32.0,
            circuit_energy: 0.0,
            model_size: 1_000_000,
        };
        let workers = vec![
            WorkerProfile {
                compute_speed: 0.5e6,
                power_factor: 1e-16,
                power_cap: 8.0,
            },
            WorkerProfile {
                compute_speed: 1e6,
                power_factor: 1e-16,
                power_cap: 8.0,
            },
        ];
        let ch = ChannelMatrix::new(vec![vec![1e-3, 1e-3], vec![1e-3, 1e-3]]);
        Scenario::new(cfg, workers, ch, 0).unwrap()
    }

    #[test]
    fn compute_latency_is_load_over_speed() {
        let s = scenario_2x2();
        let mut p = AllocationPlan::zeros(2, 2);
        p.worker_loads[0] = 1e6;
        let lat = worker_latency(&p, &s, 0).unwrap();
        assert_eq!(lat.compute, 2.0);
    }

    #[test]
    fn upload_latency_and_max_rule() {
        let s = scenario_2x2();
        let mut p = AllocationPlan::zeros(2, 2);
        p.assignment[0] = vec![1.0, 1.0];
        p.subcarrier_loads[0] = vec![1e4, 3e4];
        p.rates[0] = vec![3.2e6, 3.2e6];
        let lat = worker_latency(&p, &s, 0).unwrap();
        assert!((lat.per_subcarrier[0] - 0.1).abs() < 1e-15);
        assert!((lat.per_subcarrier[1] - 0.3).abs() < 1e-15);
        assert_eq!(lat.upload, lat.per_subcarrier[1]);
    }

    #[test]
    fn zero_rate_with_load_is_an_error() {
        let s = scenario_2x2();
        let mut p = AllocationPlan::zeros(2, 2);
        p.assignment[0][0] = 1.0;
        p.subcarrier_loads[0][0] = 5.0;
        assert!(matches!(
            worker_latency(&p, &s, 0),
            Err(Error::UndefinedLatency {
                worker: 0,
                subcarrier: 0,
                ..
            })
        ));
    }

    #[test]
    fn compute_energy_and_unit_rate_power() {
        let mut s = scenario_2x2();
        s.workers[0].compute_speed = 1e6;
        let mut p = AllocationPlan::zeros(2, 2);
        p.worker_loads[0] = 1e6;
        p.assignment[0][0] = 1.0;
        p.rates[0][0] = 312_500.0;
        let e = worker_energy(&p, &s, 0).unwrap();
        assert!((e.compute - 100.0).abs() < 1e-9);
        assert!((e.per_subcarrier_power[0] - 0.3125).abs() < 1e-15);
        // no load uploaded => no upload energy
        assert_eq!(e.upload, 0.0);
    }

    #[test]
    fn homogeneous_in_loads() {
        let s = scenario_2x2();
        let mut p = AllocationPlan::zeros(2, 2);
        p.worker_loads[0] = 3e5;
        p.assignment[0] = vec![1.0, 1.0];
        p.subcarrier_loads[0] = vec![1e5, 2e5];
        p.rates[0] = vec![1e6, 2e6];
        let mut q = p.clone();
        q.worker_loads[0] *= 2.0;
        for l in &mut q.subcarrier_loads[0] {
            *l *= 2.0;
        }
        let (lp, lq) = (
            worker_latency(&p, &s, 0).unwrap(),
            worker_latency(&q, &s, 0).unwrap(),
        );
        let (ep, eq) = (
            worker_energy(&p, &s, 0).unwrap(),
            worker_energy(&q, &s, 0).unwrap(),
        );
        assert!((lq.compute - 2.0 * lp.compute).abs() < 1e-12);
        assert!((lq.upload - 2.0 * lp.upload).abs() < 1e-12);
        assert!((eq.compute - 2.0 * ep.compute).abs() < 1e-9);
        assert!((eq.upload - 2.0 * ep.upload).abs() < 1e-9);
    }

    #[test]
    fn link_power_small_rate_precision() {
        let p = link_power(1e-3, 1e-3, 312_500.0, 3.125e-4);
        let exact = (1e-3f64 / 312_500.0 * std::f64::consts::LN_2).exp_m1() * 3.125e-4 / 1e-3;
        assert!((p - exact).abs() <= 1e-15 * exact.abs());
    }

    fn feasible_plan(s: &Scenario) -> AllocationPlan {
        // Worker 0 takes subcarrier 0, worker 1 subcarrier 1, generous latency.
        let mut p = AllocationPlan::zeros(2, 2);
        p.latency = 40.0;
        p.assignment = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        p.worker_loads = vec![4e5, 6e5];
        p.subcarrier_loads = vec![vec![4e5, 0.0], vec![0.0, 6e5]];
        p.rates = vec![vec![6.25e5, 0.0], vec![0.0, 6.25e5]];
        assert!(validate_plan(&p, s, None).unwrap().feasible);
        p
    }

    #[test]
    fn missing_parameter_violates_c3() {
        let s = scenario_2x2();
        let mut p = feasible_plan(&s);
        p.worker_loads[1] -= 1.0;
        p.subcarrier_loads[1][1] -= 1.0;
        let r = validate_plan(&p, &s, None).unwrap();
        assert_eq!(r.model_size, -1.0);
        assert!(!r.feasible);
    }

    #[test]
    fn double_assignment_violates_c1() {
        let s = scenario_2x2();
        let mut p = feasible_plan(&s);
        p.assignment[1][0] = 1.0;
        let r = validate_plan(&p, &s, None).unwrap();
        assert!(r.assignment[0] < 0.0);
        assert!(!r.feasible);
    }

    #[test]
    fn granularity_and_zero_load_rules() {
        let s = scenario_2x2();
        let p = feasible_plan(&s);
        let r = validate_plan(&p, &s, Some(2e5)).unwrap();
        assert!(r.feasible);
        let r = validate_plan(&p, &s, Some(3e5)).unwrap();
        assert!(!r.feasible);

        // A worker without load is exempt from C2/C4 but still pays the circuit energy.
        let mut s2 = s.clone();
        s2.config.circuit_energy = 1.0;
        let mut q = p.clone();
        q.worker_loads = vec![0.0, 1e6];
        q.subcarrier_loads = vec![vec![0.0, 0.0], vec![0.0, 1e6]];
        let r = validate_plan(&q, &s2, None).unwrap();
        assert_eq!(r.latency[0], q.latency);
        assert!((r.power[0] - (8.0 * 40.0 - 1.0)).abs() < 1e-12);
    }
}
