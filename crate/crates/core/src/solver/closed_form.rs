//! Stationary-point formulas of the transformed problem for fixed multipliers.
//!
//! `lambda` prices the computation/upload coupling of a worker and `nu` its energy budget.
//! Everything here is a pure function of the multipliers and the channel.

use std::f64::consts::LN_2;

use crate::error::{Error, Result};
use crate::scenario::{Scenario, WorkerProfile};

/// Water level `lambda * B / (nu * tau * ln 2)` shared by all subcarriers of one worker.
pub fn water_level(lambda: f64, nu: f64, bandwidth: f64, bits_per_parameter: f64) -> Result<f64> {
    if !(nu > 0.0) {
        return Err(Error::DegenerateDual);
    }
    Ok(lambda * bandwidth / (nu * bits_per_parameter * LN_2))
}

/// Optimal link rate (bits/s) on one subcarrier, clamped at zero below the noise level.
pub fn optimal_rate(
    lambda: f64,
    nu: f64,
    gain: f64,
    bandwidth: f64,
    bits_per_parameter: f64,
    noise_power: f64,
) -> Result<f64> {
    let level = water_level(lambda, nu, bandwidth, bits_per_parameter)?;
    let snr = level * gain / noise_power;
    Ok(if snr > 1.0 {
        bandwidth * snr.log2()
    } else {
        0.0
    })
}

/// Optimal transmit power: water level minus the inverse channel-to-noise ratio, floored at 0.
pub fn optimal_power(
    lambda: f64,
    nu: f64,
    gain: f64,
    bandwidth: f64,
    bits_per_parameter: f64,
    noise_power: f64,
) -> Result<f64> {
    let level = water_level(lambda, nu, bandwidth, bits_per_parameter)?;
    Ok((level - noise_power / gain).max(0.0))
}

/// Square-root term shared by the worker and subcarrier load formulas. Its square root
/// is the upload time of the worker.
pub fn load_discriminant(
    latency: f64,
    lambda: f64,
    nu: f64,
    worker: &WorkerProfile,
    circuit_energy: f64,
) -> f64 {
    let f = worker.compute_speed;
    lambda * latency + nu * worker.power_factor * f * f * latency
        - nu * (worker.power_cap * latency - circuit_energy) / f
}

/// Optimal number of parameters assigned to a worker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorkerLoad {
    pub load: f64,
    /// The discriminant was negative and the load was set to zero.
    pub degenerate: bool,
}

/// Optimal worker load `[T - sqrt(D)] f`, clamped to `[0, f T]`.
pub fn optimal_worker_load(
    latency: f64,
    lambda: f64,
    nu: f64,
    worker: &WorkerProfile,
    circuit_energy: f64,
) -> WorkerLoad {
    let d = load_discriminant(latency, lambda, nu, worker, circuit_energy);
    if d < 0.0 {
        return WorkerLoad {
            load: 0.0,
            degenerate: true,
        };
    }
    let f = worker.compute_speed;
    let load = ((latency - d.sqrt()) * f).clamp(0.0, f * latency);
    WorkerLoad {
        load,
        degenerate: false,
    }
}

/// Optimal number of parameters uploaded on one subcarrier by a worker holding it in full.
#[allow(clippy::too_many_arguments)]
pub fn optimal_subcarrier_load(
    latency: f64,
    lambda: f64,
    nu: f64,
    worker: &WorkerProfile,
    gain: f64,
    bandwidth: f64,
    bits_per_parameter: f64,
    noise_power: f64,
    circuit_energy: f64,
) -> Result<f64> {
    let rate = optimal_rate(lambda, nu, gain, bandwidth, bits_per_parameter, noise_power)?;
    let d = load_discriminant(latency, lambda, nu, worker, circuit_energy);
    if d < 0.0 || rate <= 0.0 {
        return Ok(0.0);
    }
    Ok(d.sqrt() / bits_per_parameter * rate)
}

/// `psi(x) = x ln x - x + 1` for `x > 1`, else 0. Non-negative and convex.
pub(crate) fn psi(x: f64) -> f64 {
    if x <= 1.0 {
        return 0.0;
    }
    let d = x - 1.0;
    if d < 1e-3 {
        // x ln x - x + 1 = d^2/2 - d^3/6 + d^4/12 - ...
        return d * d * (0.5 - d * (1.0 / 6.0 - d / 12.0));
    }
    x * x.ln() - d
}

/// Indicator of subcarrier `n` for worker `k`; the subcarrier goes to the smallest one.
///
/// Equals `nu sigma^2/h [(2^{R/B} - 1) - (R/B) 2^{R/B} ln 2]`, which is never positive.
pub fn subcarrier_indicator(
    nu: f64,
    gain: f64,
    bandwidth: f64,
    rate: f64,
    noise_power: f64,
) -> f64 {
    let x = (rate / bandwidth * LN_2).exp();
    -nu * noise_power / gain * psi(x)
}

/// Assigns each subcarrier to the worker with the smallest indicator. Exact ties split
/// the subcarrier equally among the tied workers.
pub fn assign_subcarriers(indicators: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let k_count = indicators.len();
    let n_count = indicators.first().map_or(0, Vec::len);
    let mut c = vec![vec![0.0; n_count]; k_count];
    for n in 0..n_count {
        let best = indicators
            .iter()
            .map(|row| row[n])
            .fold(f64::INFINITY, f64::min);
        let tied: Vec<usize> = (0..k_count).filter(|&k| indicators[k][n] == best).collect();
        let share = 1.0 / tied.len() as f64;
        for k in tied {
            c[k][n] = share;
        }
    }
    c
}

/// Multipliers and transformed primal variables of the relaxed problem.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DualState {
    /// Per-worker coupling multipliers.
    pub lambda: Vec<f64>,
    /// Per-worker energy multipliers.
    pub nu: Vec<f64>,
    /// Per-subcarrier assignment prices (smallest indicator of the column).
    pub mu: Vec<f64>,
    /// `1 / (T - L_k / f_k)`, inverse upload time.
    pub phi: Vec<f64>,
    /// Effective rates `C * R` in bits/s.
    pub effective_rates: Vec<Vec<f64>>,
}

/// Residuals of the coupling and energy constraints at the given transformed variables.
/// Returns `(r_lambda, r_nu)` per worker; both are 0 at an interior optimum.
pub fn dual_residuals(
    duals: &DualState,
    assignment: &[Vec<f64>],
    scenario: &Scenario,
    latency: f64,
) -> Vec<(f64, f64)> {
    let cfg = &scenario.config;
    let b = cfg.subcarrier_bandwidth;
    scenario
        .workers
        .iter()
        .enumerate()
        .map(|(k, w)| {
            let f = w.compute_speed;
            let phi = duals.phi[k];
            let excess = latency * phi - 1.0;
            let mut rate_sum = 0.0;
            let mut power_sum = 0.0;
            for (n, &rt) in duals.effective_rates[k].iter().enumerate() {
                let c = assignment[k][n];
                rate_sum += rt;
                if c > 0.0 && rt > 0.0 {
                    let h = scenario.channels.gain(k, n);
                    power_sum += c * cfg.noise_power * (rt / (b * c) * LN_2).exp_m1() / h;
                }
            }
            let r_lambda = f * excess - rate_sum / cfg.bits_per_parameter;
            let r_nu = power_sum + w.power_factor * f * f * f * excess
                - (w.power_cap * latency - cfg.circuit_energy) * phi;
            (r_lambda, r_nu)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{ChannelMatrix, SystemConfig};

    fn worker() -> WorkerProfile {
        WorkerProfile {
            compute_speed: 1e6,
            power_factor: 1e-16,
            power_cap: 8.0,
        }
    }

    #[test]
    fn rate_from_water_level() {
        // lambda B / (nu tau ln2) * h / sigma^2 = 4 -> R = 2B
        let b = 312_500.0;
        let tau = 32.0;
        let nu = 1.0;
        let lambda = 4.0 * tau * LN_2 / b;
        let r = optimal_rate(lambda, nu, 1.0, b, tau, 1.0).unwrap();
        assert!((r - 2.0 * b).abs() < 1e-6);
        let p = optimal_power(lambda, nu, 1.0, b, tau, 1.0).unwrap();
        assert!((p - 3.0).abs() < 1e-12);
    }

    #[test]
    fn rate_clamps_below_noise() {
        let r = optimal_rate(1e-9, 1.0, 1e-3, 312_500.0, 32.0, 3.125e-4).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn zero_nu_is_degenerate() {
        assert!(matches!(
            optimal_rate(1.0, 0.0, 1.0, 1.0, 1.0, 1.0),
            Err(Error::DegenerateDual)
        ));
    }

    #[test]
    fn zero_nu_collapses_load_formula() {
        let l = optimal_worker_load(1.0, 0.25, 0.0, &worker(), 0.0);
        assert!((l.load - 5e5).abs() < 1e-6);
        // D = T^2 leaves no time for computing.
        let l = optimal_worker_load(1.0, 1.0, 0.0, &worker(), 0.0);
        assert_eq!(l.load, 0.0);
    }

    #[test]
    fn negative_discriminant_gives_zero_load() {
        // lambda = 0 and an energy budget far above the compute energy make D negative.
        let mut w = worker();
        w.compute_speed = 1e5;
        let l = optimal_worker_load(1.0, 0.0, 1.0, &w, 0.0);
        assert_eq!(l.load, 0.0);
        assert!(l.degenerate);
    }

    #[test]
    fn worker_load_stays_in_range() {
        let w = worker();
        for &(lambda, nu) in &[(1e-6, 1e-3), (1.0, 1e-9), (1e3, 1e3)] {
            let l = optimal_worker_load(0.5, lambda, nu, &w, 0.0);
            assert!(l.load >= 0.0 && l.load <= w.compute_speed * 0.5);
        }
    }

    #[test]
    fn indicator_is_nonpositive_and_zero_at_zero_rate() {
        assert_eq!(
            subcarrier_indicator(1.0, 1e-3, 312_500.0, 0.0, 3.125e-4),
            0.0
        );
        for r in [1.0, 1e3, 1e6, 5e6] {
            assert!(subcarrier_indicator(2.0, 1e-3, 312_500.0, r, 3.125e-4) < 0.0);
        }
    }

    #[test]
    fn psi_series_matches_direct_form() {
        for x in [1.0005f64, 1.000999] {
            let direct = x * x.ln() - x + 1.0;
            assert!((psi(x) - direct).abs() < 1e-15);
        }
    }

    #[test]
    fn assignment_picks_smallest_and_splits_ties() {
        let c = assign_subcarriers(&[vec![-0.4, -0.1], vec![-0.2, -0.1]]);
        assert_eq!(c, vec![vec![1.0, 0.5], vec![0.0, 0.5]]);
    }

    #[test]
    fn residuals_with_idle_worker() {
        let cfg = SystemConfig {
            num_subcarriers: 2,
            subcarrier_bandwidth: 312_500.0,
            noise_power: 3.125e-4,
            bits_per_parameter: 32.0,
            circuit_energy: 0.5,
            model_size: 1000,
        };
        let s = Scenario::new(
            cfg,
            vec![worker()],
            ChannelMatrix::new(vec![vec![1e-3, 2e-3]]),
            0,
        )
        .unwrap();
        let t = 2.0;
        let duals = DualState {
            lambda: vec![1.0],
            nu: vec![1.0],
            mu: vec![0.0, 0.0],
            phi: vec![1.0 / t],
            effective_rates: vec![vec![0.0, 0.0]],
        };
        let r = dual_residuals(&duals, &[vec![0.5, 0.5]], &s, t);
        assert_eq!(r[0].0, 0.0);
        assert!((r[0].1 + (8.0 * t - 0.5) / t).abs() < 1e-12);
    }
}
