//! Joint subcarrier, load and power allocation minimizing the round latency.
//!
//! [`max_model_size`] answers the inner question (how many parameters fit in latency `T`),
//! [`min_latency`] bisects on `T` until that number reaches the model size, and
//! [`rounding`] turns fractional subcarrier shares into a binary assignment.

pub mod closed_form;
pub mod rounding;

pub(crate) mod relaxed;
pub(crate) mod worker;

use serde::{Deserialize, Serialize};

use crate::cost_model::AllocationPlan;
use crate::error::{Error, Result};
use crate::scenario::Scenario;

pub use closed_form::DualState;
pub use rounding::{
    integerize_loads, resolve_with_fixed_assignment, resolve_with_fixed_loads, round_subcarriers,
    round_subcarriers_exhaustive, MAX_ROUNDINGS,
};

use relaxed::{Goal, ShareSearch};

/// Tuning knobs of the solver. The defaults are what the experiments use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Relative duality gap at which the share search stops.
    pub gap_tolerance: f64,
    /// Cap on share updates per call of the inner search.
    pub max_iterations: usize,
    /// Relative width of the final latency bracket.
    pub latency_tolerance: f64,
    /// Factor by which the upper latency bound grows while bracketing.
    pub bracket_growth: f64,
    /// Cap on bracket expansions before the target is declared infeasible.
    pub max_bracket_steps: usize,
    /// Initial exponent of the multiplicative share update.
    pub response_exponent: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            gap_tolerance: 1e-6,
            max_iterations: 100_000,
            latency_tolerance: 1e-6,
            bracket_growth: 2.0,
            max_bracket_steps: 60,
            response_exponent: 2.0,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        let pos = |field: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::validation(
                    field,
                    format!("must be positive, got {v}"),
                ))
            }
        };
        pos("gap_tolerance", self.gap_tolerance)?;
        pos("latency_tolerance", self.latency_tolerance)?;
        pos("response_exponent", self.response_exponent)?;
        if !(self.bracket_growth > 1.0) {
            return Err(Error::validation("bracket_growth", "must exceed 1"));
        }
        Ok(())
    }
}

/// A plan together with the multipliers and convergence data that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub plan: AllocationPlan,
    pub duals: DualState,
    /// Total parameters the plan can train, `sum_k L_k`.
    pub achieved_model_size: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Upper bound on the relative distance of `achieved_model_size` from the optimum.
    pub duality_gap: f64,
}

/// Relaxed plan before rounding and binary plan after it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportSolution {
    pub relaxed: SolveResult,
    pub rounded: SolveResult,
}

fn check_latency(scenario: &Scenario, latency: f64) -> Result<()> {
    let floor = scenario.latency_floor();
    if !(latency >= floor) || !latency.is_finite() {
        return Err(Error::InfeasibleLatency { latency, floor });
    }
    Ok(())
}

/// Largest model size trainable within `latency`, over relaxed subcarrier shares.
pub fn max_model_size(
    scenario: &Scenario,
    latency: f64,
    opts: &SolverOptions,
) -> Result<SolveResult> {
    opts.validate()?;
    check_latency(scenario, latency)?;
    let mut search = ShareSearch::new(scenario, opts);
    let outcome = search.run(latency, Goal::Converge, opts, opts.max_iterations);
    Ok(search.result(latency, outcome))
}

/// Lower end of the latency bracket: circuit-energy floor and the time to compute the
/// whole model with every worker at full speed.
pub(crate) fn latency_lower_bound(scenario: &Scenario, model_size: f64) -> f64 {
    let speed: f64 = scenario.workers.iter().map(|w| w.compute_speed).sum();
    scenario.latency_floor().max(model_size / speed)
}

/// Expands `[lower, upper]` geometrically until `feasible(upper)`, then bisects to the
/// relative tolerance. Returns the feasible upper end.
pub(crate) fn bisect_latency(
    lower: f64,
    opts: &SolverOptions,
    mut feasible: impl FnMut(f64) -> bool,
) -> Result<f64> {
    let mut lo = lower;
    let mut hi = if lower > 0.0 {
        lower * opts.bracket_growth
    } else {
        1e-9
    };
    let mut steps = 0;
    while !feasible(hi) {
        steps += 1;
        if steps > opts.max_bracket_steps {
            return Err(Error::InfeasibleTarget(format!(
                "no feasible latency found up to {hi} s"
            )));
        }
        lo = hi;
        hi *= opts.bracket_growth;
    }
    while hi - lo > opts.latency_tolerance * hi {
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Smallest latency at which relaxed shares can train `model_size` parameters.
pub fn min_latency(
    scenario: &Scenario,
    model_size: f64,
    opts: &SolverOptions,
) -> Result<SolveResult> {
    opts.validate()?;
    let target = model_size;
    let mut search = ShareSearch::new(scenario, opts);
    if target <= 0.0 {
        let t = scenario.latency_floor();
        let outcome = search.run(t, Goal::Converge, opts, 0);
        return Ok(search.result(t, outcome));
    }
    let mut iterations = 0;
    let mut certified = None;
    let t = bisect_latency(latency_lower_bound(scenario, target), opts, |t| {
        let outcome = search.run(t, Goal::Decide(target), opts, opts.max_iterations);
        iterations += outcome.iterations;
        let ok = outcome.snapshot.total >= target;
        if ok {
            certified = Some(search.shares.clone());
        }
        ok
    })?;
    if let Some(shares) = certified {
        search.shares = shares;
    }
    let outcome = search.run(t, Goal::Converge, opts, opts.max_iterations);
    iterations += outcome.iterations;
    let mut result = search.result(t, outcome);
    result.iterations = iterations;
    if result.achieved_model_size < target {
        return Err(Error::InfeasibleTarget(format!(
            "share search lost feasibility at {t} s"
        )));
    }
    Ok(result)
}

/// Full pipeline for the scenario's model size: relaxed minimum latency followed by
/// rounding of fractional shares.
pub fn solve(scenario: &Scenario, opts: &SolverOptions) -> Result<SupportSolution> {
    let model_size = scenario.config.model_size as f64;
    let relaxed = min_latency(scenario, model_size, opts)?;
    let rounded = round_subcarriers_exhaustive(&relaxed, scenario, model_size, opts)?;
    Ok(SupportSolution { relaxed, rounded })
}
