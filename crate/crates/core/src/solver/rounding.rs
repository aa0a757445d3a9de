//! Binary subcarrier assignment from relaxed shares, and re-solves under a frozen
//! assignment.

use crate::cost_model::AllocationPlan;
use crate::error::{Error, Result};
use crate::scenario::Scenario;

use super::closed_form::DualState;
use super::relaxed::{build_result, evaluate_shares};
use super::worker::{
    level_for_rate, max_load, min_latency_for_load, noise_rows, upload_budget, WorkerConsts,
};
use super::{bisect_latency, latency_lower_bound, SolveResult, SolverOptions};

/// Gives every fractional subcarrier to the worker uploading the most parameters on it
/// (ties go to the lower index), then re-solves with the assignment frozen. A result whose
/// shares are already binary is returned unchanged.
pub fn round_subcarriers(
    result: &SolveResult,
    scenario: &Scenario,
    model_size: f64,
    opts: &SolverOptions,
) -> Result<SolveResult> {
    let plan = &result.plan;
    plan.check_dims(scenario)?;
    if plan.is_binary() {
        return Ok(result.clone());
    }
    let assignment = argmax_assignment(plan);
    resolve_with_fixed_assignment(scenario, &assignment, model_size, opts)
}

pub(crate) fn argmax_assignment(plan: &AllocationPlan) -> Vec<Vec<f64>> {
    let k_count = plan.num_workers();
    let n_count = plan.num_subcarriers();
    let mut c = vec![vec![0.0; n_count]; k_count];
    for n in 0..n_count {
        let binary = (0..k_count).all(|k| {
            let x = plan.assignment[k][n];
            x == 0.0 || x == 1.0
        });
        let winner = if binary {
            (0..k_count).find(|&k| plan.assignment[k][n] == 1.0)
        } else {
            None
        };
        let winner = winner.unwrap_or_else(|| {
            let mut best = 0;
            for k in 1..k_count {
                if plan.subcarrier_loads[k][n] > plan.subcarrier_loads[best][n] {
                    best = k;
                }
            }
            best
        });
        c[winner][n] = 1.0;
    }
    c
}

/// Hands the fractional columns out one at a time, each to the worker whose relaxed upload
/// on fractional columns is least covered so far. Where the argmax rule sees only ties
/// (identical workers, flat channels) it would give every column to worker 0; this keeps
/// the split even.
fn balanced_assignment(plan: &AllocationPlan, choices: &[(usize, Vec<usize>)]) -> Vec<Vec<f64>> {
    let mut c = argmax_assignment(plan);
    let mut remaining: Vec<f64> = (0..plan.num_workers())
        .map(|k| {
            choices
                .iter()
                .map(|(n, _)| plan.subcarrier_loads[k][*n])
                .sum()
        })
        .collect();
    for (n, owners) in choices {
        // `owners` is sorted by load on this column, so ties go to the larger load.
        let mut pick = owners[0];
        for &k in &owners[1..] {
            if remaining[k] > remaining[pick] {
                pick = k;
            }
        }
        for row in c.iter_mut() {
            row[*n] = 0.0;
        }
        c[pick][*n] = 1.0;
        remaining[pick] -= plan.subcarrier_loads.iter().map(|r| r[*n]).sum::<f64>();
    }
    c
}

/// Largest number of roundings [`round_subcarriers_exhaustive`] evaluates.
pub const MAX_ROUNDINGS: usize = 64;

/// Like [`round_subcarriers`], but when the fractional subcarriers admit at most
/// [`MAX_ROUNDINGS`] binary completions (over the workers actually using each one) all of
/// them are re-solved and the fastest is kept. Otherwise the argmax rounding competes with
/// a demand-balanced one. The argmax rounding is always a candidate and wins ties, so the
/// result is never slower than [`round_subcarriers`].
pub fn round_subcarriers_exhaustive(
    result: &SolveResult,
    scenario: &Scenario,
    model_size: f64,
    opts: &SolverOptions,
) -> Result<SolveResult> {
    let plan = &result.plan;
    plan.check_dims(scenario)?;
    if plan.is_binary() {
        return Ok(result.clone());
    }
    let base = argmax_assignment(plan);
    let choices = rounding_choices(plan);
    let combos = choices
        .iter()
        .try_fold(1usize, |acc, (_, c)| acc.checked_mul(c.len()))
        .filter(|&c| c <= MAX_ROUNDINGS);
    let mut best = resolve_with_fixed_assignment(scenario, &base, model_size, opts)?;
    let Some(combos) = combos else {
        let balanced = balanced_assignment(plan, &choices);
        if balanced != base {
            let cand = resolve_with_fixed_assignment(scenario, &balanced, model_size, opts)?;
            if cand.plan.latency < best.plan.latency {
                best = cand;
            }
        }
        return Ok(best);
    };
    for code in 1..combos {
        let mut assignment = base.clone();
        let mut rest = code;
        for (n, owners) in &choices {
            let pick = owners[rest % owners.len()];
            rest /= owners.len();
            for row in assignment.iter_mut() {
                row[*n] = 0.0;
            }
            assignment[pick][*n] = 1.0;
        }
        let cand = resolve_with_fixed_assignment(scenario, &assignment, model_size, opts)?;
        if cand.plan.latency < best.plan.latency {
            best = cand;
        }
    }
    Ok(best)
}

/// Fractional columns with the workers uploading on them, argmax first.
fn rounding_choices(plan: &AllocationPlan) -> Vec<(usize, Vec<usize>)> {
    let k_count = plan.num_workers();
    let mut out = Vec::new();
    for n in 0..plan.num_subcarriers() {
        let binary = (0..k_count).all(|k| {
            let x = plan.assignment[k][n];
            x == 0.0 || x == 1.0
        });
        if binary {
            continue;
        }
        let top = (0..k_count)
            .map(|k| plan.subcarrier_loads[k][n])
            .fold(0.0, f64::max);
        let mut owners: Vec<usize> = (0..k_count)
            .filter(|&k| plan.subcarrier_loads[k][n] > 1e-9 * top)
            .collect();
        // Stable sort keeps lower indices first among equal loads, matching the argmax rule.
        owners
            .sort_by(|&a, &b| plan.subcarrier_loads[b][n].total_cmp(&plan.subcarrier_loads[a][n]));
        if owners.len() > 1 {
            out.push((n, owners));
        }
    }
    out
}

fn check_binary(scenario: &Scenario, assignment: &[Vec<f64>]) -> Result<()> {
    let k_count = scenario.num_workers();
    let n_count = scenario.num_subcarriers();
    if assignment.len() != k_count || assignment.iter().any(|r| r.len() != n_count) {
        return Err(Error::Dimension(format!(
            "assignment must be {k_count}x{n_count}"
        )));
    }
    for n in 0..n_count {
        let mut owners = 0;
        for (k, row) in assignment.iter().enumerate() {
            let x = row[n];
            if x == 1.0 {
                owners += 1;
            } else if x != 0.0 {
                return Err(Error::validation(
                    format!("assignment[{k}][{n}]"),
                    format!("must be 0 or 1, got {x}"),
                ));
            }
        }
        if owners != 1 {
            return Err(Error::validation(
                format!("assignment[..][{n}]"),
                format!("subcarrier must have exactly one owner, has {owners}"),
            ));
        }
    }
    Ok(())
}

/// Minimum latency for `model_size` parameters with the subcarrier assignment frozen.
/// Loads, rates and powers are re-optimized.
pub fn resolve_with_fixed_assignment(
    scenario: &Scenario,
    assignment: &[Vec<f64>],
    model_size: f64,
    opts: &SolverOptions,
) -> Result<SolveResult> {
    opts.validate()?;
    check_binary(scenario, assignment)?;
    let k_count = scenario.num_workers();
    let consts: Vec<WorkerConsts> = (0..k_count)
        .map(|k| WorkerConsts::new(scenario, k))
        .collect();
    let noise = noise_rows(scenario);
    let mut levels = vec![None; k_count];
    let mut evaluations = 0;
    let t = if model_size <= 0.0 {
        scenario.latency_floor()
    } else {
        bisect_latency(latency_lower_bound(scenario, model_size), opts, |t| {
            evaluations += 1;
            let mut total = 0.0;
            for k in 0..k_count {
                let sol = max_load(&consts[k], t, &assignment[k], &noise[k], levels[k]);
                if sol.log_level.is_some() {
                    levels[k] = sol.log_level;
                }
                total += sol.load;
            }
            total >= model_size
        })?
    };
    let snap = evaluate_shares(&consts, &noise, assignment, &mut levels, t);
    Ok(build_result(
        &consts,
        &noise,
        assignment,
        t,
        snap,
        evaluations,
        true,
    ))
}

/// Minimum latency when both the assignment and the worker loads are frozen: every
/// worker finishes its own load as fast as it can and the round waits for the slowest.
pub fn resolve_with_fixed_loads(
    scenario: &Scenario,
    assignment: &[Vec<f64>],
    loads: &[f64],
) -> Result<SolveResult> {
    check_binary(scenario, assignment)?;
    let k_count = scenario.num_workers();
    if loads.len() != k_count {
        return Err(Error::Dimension(format!("expected {k_count} loads")));
    }
    let noise = noise_rows(scenario);
    let mut t: f64 = scenario.latency_floor();
    for k in 0..k_count {
        let c = WorkerConsts::new(scenario, k);
        let tk = min_latency_for_load(&c, loads[k], &assignment[k], &noise[k]);
        if tk.is_infinite() {
            return Err(Error::InfeasibleTarget(format!(
                "worker {k} has load {} but no subcarriers",
                loads[k]
            )));
        }
        t = t.max(tk);
    }
    Ok(fixed_load_result(scenario, assignment, loads, t))
}

/// Plan in which every worker uploads exactly its load and finishes at `t`, using the
/// least transmit power. Workers whose load cannot be uploaded get zero rates.
pub(crate) fn fixed_load_result(
    scenario: &Scenario,
    assignment: &[Vec<f64>],
    loads: &[f64],
    t: f64,
) -> SolveResult {
    let k_count = scenario.num_workers();
    let n_count = scenario.num_subcarriers();
    let noise = noise_rows(scenario);
    let mut plan = AllocationPlan::zeros(k_count, n_count);
    plan.assignment = assignment.to_vec();
    plan.latency = t;
    let mut lambda = vec![0.0; k_count];
    let mut nu = vec![0.0; k_count];
    let mut phi = vec![0.0; k_count];
    let mut effective_rates = vec![vec![0.0; n_count]; k_count];
    for k in 0..k_count {
        let c = WorkerConsts::new(scenario, k);
        plan.worker_loads[k] = loads[k];
        let Some(u) = upload_budget(&c, loads[k], t) else {
            continue;
        };
        phi[k] = 1.0 / u;
        if loads[k] <= 0.0 {
            continue;
        }
        let needed = loads[k] * c.bits / u;
        let Some(s) = level_for_rate(&c, needed, &assignment[k], &noise[k]) else {
            continue;
        };
        let mut delivered = 0.0;
        for n in 0..n_count {
            let share = assignment[k][n];
            if share > 0.0 && s > noise[k].logs[n] {
                let r = c.bandwidth / std::f64::consts::LN_2 * (s - noise[k].logs[n]);
                plan.rates[k][n] = r;
                effective_rates[k][n] = share * r;
                delivered += share * r;
            }
        }
        // Spread the load in proportion to throughput so every subcarrier finishes at t.
        for n in 0..n_count {
            if effective_rates[k][n] > 0.0 {
                plan.subcarrier_loads[k][n] = loads[k] * effective_rates[k][n] / delivered;
            }
        }
        let sol = max_load(&c, t, &assignment[k], &noise[k], Some(s));
        lambda[k] = sol.lambda;
        nu[k] = sol.nu;
    }
    let mu = vec![0.0; n_count];
    SolveResult {
        achieved_model_size: plan.total_load(),
        plan,
        duals: DualState {
            lambda,
            nu,
            mu,
            phi,
            effective_rates,
        },
        iterations: 0,
        converged: true,
        duality_gap: 0.0,
    }
}

/// Rounds loads to whole parameters. Subcarrier loads are floored and the global
/// remainder `L - sum of floors` is handed out one parameter at a time to the cells with
/// the largest fractional parts (ties to the lower worker, then subcarrier, index).
/// Worker loads are recomputed as row sums and the latency as the realized one.
pub fn integerize_loads(plan: &AllocationPlan, scenario: &Scenario) -> Result<AllocationPlan> {
    plan.check_dims(scenario)?;
    let target = scenario.config.model_size as f64;
    let mut out = plan.clone();
    let mut cells = Vec::new();
    let mut floors = 0.0;
    for (k, row) in plan.subcarrier_loads.iter().enumerate() {
        for (n, &l) in row.iter().enumerate() {
            let fl = l.floor();
            out.subcarrier_loads[k][n] = fl;
            floors += fl;
            let frac = l - fl;
            if frac > 0.0 {
                cells.push((k, n, frac));
            }
        }
    }
    cells.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    let mut remainder = (target - floors).round().max(0.0) as usize;
    if !cells.is_empty() {
        let mut i = 0;
        while remainder > 0 {
            let (k, n, _) = cells[i % cells.len()];
            out.subcarrier_loads[k][n] += 1.0;
            remainder -= 1;
            i += 1;
        }
    }
    for (k, row) in out.subcarrier_loads.iter().enumerate() {
        out.worker_loads[k] = row.iter().sum();
    }
    let realized = crate::cost_model::realized_latency(&out, scenario)?;
    out.latency = out.latency.max(realized);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{ChannelMatrix, SystemConfig, WorkerProfile};

    fn scenario(model_size: u64) -> Scenario {
        let cfg = SystemConfig {
            num_subcarriers: 3,
            subcarrier_bandwidth: 312_500.0,
            noise_power: 3.125e-4,
            bits_per_parameter: 32.0,
            circuit_energy: 0.0,
            model_size,
        };
        let w = WorkerProfile {
            compute_speed: 1e6,
            power_factor: 1e-16,
            power_cap: 8.0,
        };
        Scenario::new(
            cfg,
            vec![w, w],
            ChannelMatrix::new(vec![vec![1e-3, 2e-3, 1e-3], vec![2e-3, 1e-3, 5e-4]]),
            0,
        )
        .unwrap()
    }

    #[test]
    fn integerize_hand_example() {
        let s = scenario(8);
        let mut plan = AllocationPlan::zeros(2, 3);
        plan.assignment = vec![vec![1.0, 1.0, 1.0], vec![0.0; 3]];
        plan.subcarrier_loads[0] = vec![2.6, 2.6, 2.8];
        plan.worker_loads[0] = 8.0;
        plan.rates[0] = vec![1e6; 3];
        plan.latency = 1.0;
        let out = integerize_loads(&plan, &s).unwrap();
        assert_eq!(out.subcarrier_loads[0], vec![3.0, 2.0, 3.0]);
        assert_eq!(out.worker_loads[0], 8.0);
    }

    #[test]
    fn integerize_keeps_integer_plan() {
        let s = scenario(8);
        let mut plan = AllocationPlan::zeros(2, 3);
        plan.assignment = vec![vec![1.0, 0.0, 1.0], vec![0.0, 1.0, 0.0]];
        plan.subcarrier_loads = vec![vec![3.0, 0.0, 2.0], vec![0.0, 3.0, 0.0]];
        plan.worker_loads = vec![5.0, 3.0];
        plan.rates = vec![vec![1e6, 0.0, 1e6], vec![0.0, 1e6, 0.0]];
        plan.latency = 1.0;
        assert_eq!(integerize_loads(&plan, &s).unwrap(), plan);
    }

    #[test]
    fn argmax_rounding_prefers_larger_load_and_lower_index() {
        let mut plan = AllocationPlan::zeros(2, 2);
        plan.assignment = vec![vec![0.3, 0.5], vec![0.7, 0.5]];
        plan.subcarrier_loads = vec![vec![30.0, 10.0], vec![70.0, 10.0]];
        assert_eq!(
            argmax_assignment(&plan),
            vec![vec![0.0, 1.0], vec![1.0, 0.0]]
        );
    }

    #[test]
    fn fixed_loads_need_subcarriers() {
        let s = scenario(1000);
        let c = vec![vec![1.0, 1.0, 1.0], vec![0.0; 3]];
        let err = resolve_with_fixed_loads(&s, &c, &[500.0, 500.0]).unwrap_err();
        assert!(err.is_infeasible());
        assert!(resolve_with_fixed_loads(&s, &c, &[1000.0, 0.0]).is_ok());
    }

    #[test]
    fn fixed_assignment_rejects_fractional_shares() {
        let s = scenario(1000);
        let c = vec![vec![0.5, 1.0, 1.0], vec![0.5, 0.0, 0.0]];
        let opts = SolverOptions::default();
        assert!(resolve_with_fixed_assignment(&s, &c, 1000.0, &opts).is_err());
    }
}
