//! Exact per-worker subproblem for fixed subcarrier shares.
//!
//! With its shares fixed, a worker's best load at latency `T` is set by one scalar, the
//! water level `w`: rates follow from `w`, the upload time `u` from the coupling
//! constraint, and `w` itself is the root of the energy budget. Energy is increasing in
//! `w`, so the root is unique. Newton's method runs on `s = ln w` inside a bisection
//! bracket.

use std::f64::consts::LN_2;

use crate::scenario::Scenario;

use super::closed_form::psi;

/// Constants of one worker that enter its subproblem.
#[derive(Debug, Clone, Copy)]
pub(crate) struct WorkerConsts {
    pub speed: f64,
    pub power_factor: f64,
    pub power_cap: f64,
    pub circuit_energy: f64,
    pub bandwidth: f64,
    pub bits: f64,
}

impl WorkerConsts {
    pub fn new(scenario: &Scenario, k: usize) -> Self {
        let w = &scenario.workers[k];
        let cfg = &scenario.config;
        WorkerConsts {
            speed: w.compute_speed,
            power_factor: w.power_factor,
            power_cap: w.power_cap,
            circuit_energy: cfg.circuit_energy,
            bandwidth: cfg.subcarrier_bandwidth,
            bits: cfg.bits_per_parameter,
        }
    }
}

/// Noise-to-gain ratios `sigma^2 / h` of one worker and their logarithms.
#[derive(Debug, Clone)]
pub(crate) struct NoiseRow {
    pub levels: Vec<f64>,
    pub logs: Vec<f64>,
}

pub(crate) fn noise_rows(scenario: &Scenario) -> Vec<NoiseRow> {
    let s2 = scenario.config.noise_power;
    scenario
        .channels
        .gains
        .iter()
        .map(|row| {
            let levels: Vec<f64> = row.iter().map(|&h| s2 / h).collect();
            let logs = levels.iter().map(|l| l.ln()).collect();
            NoiseRow { levels, logs }
        })
        .collect()
}

/// Solution of one worker's subproblem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct WorkerSolution {
    pub load: f64,
    pub upload_time: f64,
    /// `ln w`; `None` when the worker cannot carry load.
    pub log_level: Option<f64>,
    pub lambda: f64,
    pub nu: f64,
}

impl WorkerSolution {
    fn idle(latency: f64) -> Self {
        WorkerSolution {
            load: 0.0,
            upload_time: latency,
            log_level: None,
            lambda: 0.0,
            nu: 0.0,
        }
    }

    /// Link rate on a subcarrier with the given noise level (bits/s).
    pub fn rate(&self, c: &WorkerConsts, noise: &NoiseRow, n: usize) -> f64 {
        match self.log_level {
            Some(s) if s > noise.logs[n] => c.bandwidth / LN_2 * (s - noise.logs[n]),
            _ => 0.0,
        }
    }

    /// Gain in the worker's load per unit of extra share on subcarrier `n`. Equal to
    /// minus the subcarrier indicator.
    pub fn marginal(&self, noise: &NoiseRow, n: usize) -> f64 {
        match self.log_level {
            Some(s) if s > noise.logs[n] => {
                let nl = noise.levels[n];
                self.nu * nl * psi((s - noise.logs[n]).exp())
            }
            _ => 0.0,
        }
    }
}

struct Eval {
    residual: f64,
    slope: f64,
    load: f64,
    upload_time: f64,
}

// Energy residual E(w) - P T and its derivative in s = ln w.
fn evaluate(c: &WorkerConsts, t: f64, shares: &[f64], noise: &NoiseRow, s: f64) -> Eval {
    let w = s.exp();
    let mut share = 0.0;
    let mut share_log = 0.0;
    let mut share_level = 0.0;
    for ((&cn, &nl), &lg) in shares.iter().zip(&noise.levels).zip(&noise.logs) {
        if cn > 0.0 && lg < s {
            share += cn;
            share_log += cn * lg;
            share_level += cn * nl;
        }
    }
    let rate = c.bandwidth / LN_2 * (s * share - share_log);
    let power = w * share - share_level;
    let ratio = rate / (c.bits * c.speed);
    let den = 1.0 + ratio;
    let u = t / den;
    let load = t * c.speed * ratio / den;
    let f2 = c.speed * c.speed;
    let residual = c.power_factor * f2 * load + u * power + c.circuit_energy - c.power_cap * t;
    let d_rate = c.bandwidth * share / LN_2;
    let d_u = -u * u / t * d_rate / (c.bits * c.speed);
    let slope = d_u * (power - c.power_factor * f2 * c.speed) + u * w * share;
    Eval {
        residual,
        slope,
        load,
        upload_time: u,
    }
}

/// Largest load worker `k` can finish within `t` with the given shares and its energy
/// budget. `warm` is a previous `ln w` used as the starting point.
pub(crate) fn max_load(
    c: &WorkerConsts,
    t: f64,
    shares: &[f64],
    noise: &NoiseRow,
    warm: Option<f64>,
) -> WorkerSolution {
    let budget = c.power_cap * t - c.circuit_energy;
    let lowest = shares
        .iter()
        .zip(&noise.logs)
        .filter(|(&cn, _)| cn > 0.0)
        .map(|(_, &lg)| lg)
        .fold(f64::INFINITY, f64::min);
    if !(budget > 0.0) || !lowest.is_finite() || !(t > 0.0) {
        return WorkerSolution::idle(t);
    }
    let tol_e = 1e-14 * c.power_cap * t;

    let mut lo = lowest;
    let mut hi;
    let start = warm
        .filter(|s| s.is_finite() && *s > lo)
        .unwrap_or(lo + 1.0);
    let mut x = start;
    let mut ex = evaluate(c, t, shares, noise, x);
    if ex.residual < 0.0 {
        lo = x;
        let mut step = 1.0;
        loop {
            let cand = lo + step;
            let e = evaluate(c, t, shares, noise, cand);
            if e.residual >= 0.0 {
                hi = cand;
                break;
            }
            lo = cand;
            x = cand;
            ex = e;
            step *= 2.0;
        }
    } else {
        hi = x;
    }

    for _ in 0..200 {
        if ex.residual.abs() <= tol_e && ex.residual <= 0.0 {
            break;
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi.abs().max(1.0) {
            break;
        }
        let newton = x - ex.residual / ex.slope;
        let next = if ex.slope > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        let e = evaluate(c, t, shares, noise, next);
        if e.residual <= 0.0 {
            lo = next;
        } else {
            hi = next;
        }
        x = next;
        ex = e;
    }
    if ex.residual > 0.0 {
        // Fall back to the feasible side of the bracket.
        x = lo;
        ex = evaluate(c, t, shares, noise, x);
    }

    let w = x.exp();
    let f = c.speed;
    let u = ex.upload_time;
    let bracket = w * c.bits * LN_2 * f * t / c.bandwidth + c.power_factor * f * f * f * t - budget;
    let nu = if bracket > 0.0 {
        (f * u * u / bracket).max(1e-300)
    } else {
        1e-12
    };
    let lambda = w * nu * c.bits * LN_2 / c.bandwidth;
    WorkerSolution {
        load: ex.load,
        upload_time: u,
        log_level: Some(x),
        lambda,
        nu,
    }
}

/// Water level (as `ln w`) at which the shares deliver `rate` bits/s in total, using
/// the least power. `None` when the shares are all zero.
pub(crate) fn level_for_rate(
    c: &WorkerConsts,
    rate: f64,
    shares: &[f64],
    noise: &NoiseRow,
) -> Option<f64> {
    let lowest = shares
        .iter()
        .zip(&noise.logs)
        .filter(|(&cn, _)| cn > 0.0)
        .map(|(_, &lg)| lg)
        .fold(f64::INFINITY, f64::min);
    if !lowest.is_finite() {
        return None;
    }
    if rate <= 0.0 {
        return Some(lowest);
    }
    let total = |s: f64| -> (f64, f64) {
        let mut share = 0.0;
        let mut share_log = 0.0;
        for (&cn, &lg) in shares.iter().zip(&noise.logs) {
            if cn > 0.0 && lg <= s {
                share += cn;
                share_log += cn * lg;
            }
        }
        (
            c.bandwidth / LN_2 * (s * share - share_log),
            c.bandwidth / LN_2 * share,
        )
    };
    // Total rate is convex, piecewise linear and increasing in s, so Newton steps land
    // on or above the root and then walk down onto it.
    let mut s = lowest;
    for _ in 0..shares.len() + 64 {
        let (r, slope) = total(s);
        if (r - rate).abs() <= 1e-14 * rate {
            break;
        }
        s -= (r - rate) / slope;
    }
    Some(s)
}

/// Upload time needed for `load` parameters at latency `t`, or `None` if compute alone
/// already takes `t`.
pub(crate) fn upload_budget(c: &WorkerConsts, load: f64, t: f64) -> Option<f64> {
    let u = t - load / c.speed;
    (u > 0.0).then_some(u)
}

/// Energy spent when `load` parameters are computed and uploaded within `t` using the
/// minimum-power water level for the shares. `None` if the load cannot be uploaded.
#[cfg(test)]
pub(crate) fn energy_for_load(
    c: &WorkerConsts,
    load: f64,
    t: f64,
    shares: &[f64],
    noise: &NoiseRow,
) -> Option<(f64, f64)> {
    let u = upload_budget(c, load, t)?;
    let s = level_for_rate(c, load * c.bits / u, shares, noise)?;
    let w = s.exp();
    let power: f64 = shares
        .iter()
        .zip(&noise.levels)
        .filter(|(&cn, &nl)| cn > 0.0 && nl < w)
        .map(|(&cn, &nl)| cn * (w - nl))
        .sum();
    let f = c.speed;
    Some((
        c.power_factor * f * f * load + u * power + c.circuit_energy,
        s,
    ))
}

/// Smallest latency at which the worker can finish exactly `load` parameters with the
/// given shares. Infinite if the load is positive and the shares are all zero.
pub(crate) fn min_latency_for_load(
    c: &WorkerConsts,
    load: f64,
    shares: &[f64],
    noise: &NoiseRow,
) -> f64 {
    let floor = c.circuit_energy / c.power_cap;
    if load <= 0.0 {
        return floor;
    }
    if !shares.iter().any(|&x| x > 0.0) {
        return f64::INFINITY;
    }
    let mut lo = (load / c.speed).max(floor);
    let mut hi = 2.0 * lo;
    let mut warm = None;
    for _ in 0..2000 {
        let sol = max_load(c, hi, shares, noise, warm);
        if sol.load >= load {
            break;
        }
        warm = sol.log_level;
        lo = hi;
        hi *= 2.0;
    }
    while (hi - lo) > 1e-13 * hi {
        let mid = 0.5 * (lo + hi);
        let sol = max_load(c, mid, shares, noise, warm);
        warm = sol.log_level;
        if sol.load >= load {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}
