use std::f64::consts::LN_2;

use partel::scenario::WorkerProfile;
use partel::solver::closed_form::{
    assign_subcarriers, load_discriminant, optimal_power, optimal_rate, optimal_subcarrier_load,
    optimal_worker_load, subcarrier_indicator, water_level,
};

const B: f64 = 312_500.0;
const TAU: f64 = 32.0;
const SIGMA2: f64 = 3.125e-4;

/// Multiplier that puts the water level at `level` for `nu = 1`.
fn lambda_for_level(level: f64) -> f64 {
    level * TAU * LN_2 / B
}

fn worker() -> WorkerProfile {
    WorkerProfile {
        compute_speed: 1e6,
        power_factor: 1e-16,
        power_cap: 8.0,
    }
}

#[test]
fn rate_is_zero_at_the_noise_floor_and_b_at_twice_it() {
    let h = 1e-3;
    let at_floor = optimal_rate(lambda_for_level(SIGMA2 / h), 1.0, h, B, TAU, SIGMA2).unwrap();
    assert!(at_floor.abs() < 1e-6);
    let doubled = optimal_rate(lambda_for_level(2.0 * SIGMA2 / h), 1.0, h, B, TAU, SIGMA2).unwrap();
    assert!((doubled - B).abs() < 1e-6);
}

#[test]
fn doubling_the_gain_adds_one_bandwidth_of_rate() {
    let lambda = lambda_for_level(1.0);
    for h in [1e-3, 4e-3, 0.2] {
        let r1 = optimal_rate(lambda, 1.0, h, B, TAU, SIGMA2).unwrap();
        let r2 = optimal_rate(lambda, 1.0, 2.0 * h, B, TAU, SIGMA2).unwrap();
        assert!((r2 - r1 - B).abs() < 1e-6 * B, "h={h}");
    }
}

#[test]
fn power_is_level_minus_inverse_gain() {
    let lambda = lambda_for_level(1.0);
    let p = optimal_power(lambda, 1.0, 1e-3, B, TAU, SIGMA2).unwrap();
    assert!((p - 0.6875).abs() < 1e-12);

    let (h1, h2) = (4e-3, 1e-3);
    let p1 = optimal_power(lambda, 1.0, h1, B, TAU, SIGMA2).unwrap();
    let p2 = optimal_power(lambda, 1.0, h2, B, TAU, SIGMA2).unwrap();
    assert!((p1 - p2 - SIGMA2 * (1.0 / h2 - 1.0 / h1)).abs() < 1e-12);
    assert!(p1 > p2);

    let low = lambda_for_level(0.5 * SIGMA2 / 1e-3);
    assert_eq!(optimal_power(low, 1.0, 1e-3, B, TAU, SIGMA2).unwrap(), 0.0);
    assert_eq!(optimal_rate(low, 1.0, 1e-3, B, TAU, SIGMA2).unwrap(), 0.0);
}

#[test]
fn degenerate_energy_price_is_rejected() {
    assert!(water_level(1.0, 0.0, B, TAU).is_err());
    assert!(optimal_rate(1.0, 0.0, 1e-3, B, TAU, SIGMA2).is_err());
}

#[test]
fn worker_load_examples() {
    // nu = 0 leaves sqrt(lambda T) = 0.5 s of upload time in a 1 s round.
    let l = optimal_worker_load(1.0, 0.25, 0.0, &worker(), 0.0);
    assert!((l.load - 5e5).abs() < 1e-6);
    assert!(!l.degenerate);
    // The discriminant equals T^2: the whole round goes to upload.
    let l = optimal_worker_load(2.0, 2.0, 0.0, &worker(), 0.0);
    assert_eq!(l.load, 0.0);
}

#[test]
fn worker_load_is_concave_in_speed() {
    // With nu = 0 the load is (T - sqrt(lambda T)) f, linear in f; with an energy price the
    // compute power g f^3 makes extra speed worth less and less.
    let t = 1.0;
    let (lambda, nu) = (0.05, 1e-3);
    let loads: Vec<f64> = (1..=40)
        .map(|i| {
            let w = WorkerProfile {
                compute_speed: i as f64 * 0.5e5,
                ..worker()
            };
            optimal_worker_load(t, lambda, nu, &w, 0.0).load
        })
        .collect();
    let interior: Vec<f64> = loads.iter().copied().filter(|&l| l > 0.0).collect();
    assert!(interior.len() > 3);
    for w in interior.windows(3) {
        assert!(w[0] + w[2] <= 2.0 * w[1] * (1.0 + 1e-12), "{w:?}");
    }
}

#[test]
fn subcarrier_load_examples() {
    let w = worker();
    let (t, lambda, nu) = (1.0, 0.1, 1e-3);
    // Below the noise floor nothing is uploaded.
    let weak = SIGMA2 / water_level(lambda, nu, B, TAU).unwrap() * 0.5;
    let l = optimal_subcarrier_load(t, lambda, nu, &w, weak, B, TAU, SIGMA2, 0.0).unwrap();
    assert_eq!(l, 0.0);

    let h = 1e-3;
    let l1 = optimal_subcarrier_load(t, lambda, nu, &w, h, B, TAU, SIGMA2, 0.0).unwrap();
    let l2 = optimal_subcarrier_load(t, lambda, nu, &w, 2.0 * h, B, TAU, SIGMA2, 0.0).unwrap();
    let d = load_discriminant(t, lambda, nu, &w, 0.0);
    let step = d.sqrt() * B / TAU;
    assert!((l2 - l1 - step).abs() < 1e-9 * step);
}

#[test]
fn indicator_sign_and_gain_order() {
    assert_eq!(subcarrier_indicator(1.0, 1e-3, B, 0.0, SIGMA2), 0.0);
    let lambda = lambda_for_level(1.0);
    let mut previous = 0.0;
    // Gains increase along the grid, so scores must strictly decrease.
    for i in 1..=30 {
        let h = SIGMA2 * 1.3f64.powi(i);
        let r = optimal_rate(lambda, 1.0, h, B, TAU, SIGMA2).unwrap();
        let score = subcarrier_indicator(1.0, h, B, r, SIGMA2);
        assert!(r > 0.0);
        assert!(score < 0.0);
        assert!(score < previous, "gain {h}");
        previous = score;
    }
}

#[test]
fn assignment_examples() {
    assert_eq!(
        assign_subcarriers(&[vec![-3.0], vec![-1.0]]),
        vec![vec![1.0], vec![0.0]]
    );
    assert_eq!(
        assign_subcarriers(&[vec![-2.0], vec![-2.0]]),
        vec![vec![0.5], vec![0.5]]
    );
    let all_zero = assign_subcarriers(&[vec![0.0], vec![0.0], vec![0.0], vec![0.0]]);
    assert!(all_zero.iter().all(|row| row[0] == 0.25));
}
