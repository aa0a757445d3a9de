use proptest::prelude::*;

use partel::cnn::{compute_rounding_deltas, select_roundup_set};
use partel::cost_model::worker_latency;
use partel::scenario::DistributionSpec;
use partel::solver::closed_form::{assign_subcarriers, subcarrier_indicator};
use partel::solver::{self, integerize_loads, resolve_with_fixed_assignment};
use partel::{
    generate_scenario, load_scenario, save_scenario, validate_plan, Scenario, SolverOptions,
    SystemConfig,
};

fn draw(workers: usize, subcarriers: usize, model_size: u64, seed: u64) -> Scenario {
    let mut config = SystemConfig::experiment(subcarriers);
    config.model_size = model_size;
    generate_scenario(workers, &config, &DistributionSpec::default(), seed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn solved_plans_are_feasible(
        workers in 1usize..6,
        subcarriers in 1usize..9,
        size in 10_000u64..2_000_000,
        seed in any::<u64>(),
    ) {
        let s = draw(workers, subcarriers, size, seed);
        let sol = solver::solve(&s, &SolverOptions::default()).unwrap();
        prop_assert!(sol.rounded.plan.is_binary());
        let relaxed = validate_plan(&sol.relaxed.plan, &s, None).unwrap();
        let rounded = validate_plan(&sol.rounded.plan, &s, None).unwrap();
        prop_assert!(relaxed.feasible, "{relaxed:?}");
        prop_assert!(rounded.feasible, "{rounded:?}");
        // Both the share search (gap) and the bisection stop at 1e-6, so the relaxed latency
        // can sit slightly above a rounded one that happens to be optimal.
        prop_assert!(sol.relaxed.plan.latency <= sol.rounded.plan.latency * (1.0 + 3e-6));
    }

    #[test]
    fn model_size_grows_with_latency(
        workers in 1usize..6,
        subcarriers in 1usize..9,
        seed in any::<u64>(),
        t in 0.01f64..5.0,
        stretch in 1.0f64..3.0,
    ) {
        let s = draw(workers, subcarriers, 1000, seed);
        let opts = SolverOptions::default();
        let a = solver::max_model_size(&s, t, &opts).unwrap().achieved_model_size;
        let b = solver::max_model_size(&s, t * stretch, &opts).unwrap().achieved_model_size;
        prop_assert!(b >= a, "{a} at {t} s, {b} at {} s", t * stretch);
    }

    #[test]
    fn restricted_assignments_are_never_faster(
        workers in 1usize..5,
        subcarriers in 1usize..7,
        seed in any::<u64>(),
        owners in prop::collection::vec(0usize..5, 6),
    ) {
        let s = draw(workers, subcarriers, 500_000, seed);
        let opts = SolverOptions::default();
        let mut assignment = vec![vec![0.0; subcarriers]; workers];
        for n in 0..subcarriers {
            assignment[owners[n] % workers][n] = 1.0;
        }
        let relaxed = solver::min_latency(&s, 500_000.0, &opts).unwrap().plan.latency;
        let fixed = resolve_with_fixed_assignment(&s, &assignment, 500_000.0, &opts)
            .unwrap()
            .plan
            .latency;
        prop_assert!(relaxed <= fixed * (1.0 + 3e-6), "relaxed {relaxed}, fixed {fixed}");
    }

    #[test]
    fn integer_loads_conserve_the_model_and_cost_little(
        workers in 1usize..6,
        subcarriers in 1usize..9,
        size in 1_000u64..500_000,
        seed in any::<u64>(),
    ) {
        let s = draw(workers, subcarriers, size, seed);
        let plan = solver::solve(&s, &SolverOptions::default()).unwrap().rounded.plan;
        let out = integerize_loads(&plan, &s).unwrap();
        prop_assert_eq!(out.total_load(), size as f64);
        let tau = s.config.bits_per_parameter;
        for k in 0..workers {
            prop_assert!(out.subcarrier_loads[k].iter().all(|l| l.fract() == 0.0));
            let row: f64 = out.subcarrier_loads[k].iter().sum();
            prop_assert_eq!(row, out.worker_loads[k]);
            let before = worker_latency(&plan, &s, k).unwrap().total;
            let after = worker_latency(&out, &s, k).unwrap().total;
            let slowest_link = plan.rates[k]
                .iter()
                .filter(|&&r| r > 0.0)
                .map(|r| tau / r)
                .fold(0.0, f64::max);
            let extra = (out.worker_loads[k] - plan.worker_loads[k]).max(0.0)
                / s.workers[k].compute_speed;
            prop_assert!(after - before <= extra + slowest_link + 1e-12 * before);
        }
    }

    #[test]
    fn granularity_rounding_conserves_whole_subproblems(
        loads in prop::collection::vec(0u32..5_000, 1..12),
        sub in 1u32..500,
    ) {
        let loads: Vec<f64> = loads.into_iter().map(f64::from).collect();
        let sub = f64::from(sub);
        let d = compute_rounding_deltas(&loads, sub);
        let (order, cutoff) = select_roundup_set(&d);
        let mut rounded = vec![0.0; loads.len()];
        for (i, &k) in order.iter().enumerate() {
            rounded[k] = if i < cutoff { loads[k] + d.up[k] } else { loads[k] - d.down[k] };
        }
        let total: f64 = loads.iter().sum();
        prop_assert!(rounded.iter().sum::<f64>() >= total);
        prop_assert!(rounded.iter().all(|l| l % sub == 0.0));
        if cutoff > 0 {
            let cut = d.indicator[order[cutoff - 1]];
            prop_assert!(order[..cutoff].iter().all(|&k| d.indicator[k] <= cut));
        }
    }

    #[test]
    fn every_subcarrier_is_fully_shared_out(
        scores in prop::collection::vec(prop::collection::vec(-3i32..=0, 5), 1..6),
    ) {
        let scores: Vec<Vec<f64>> =
            scores.iter().map(|r| r.iter().map(|&x| f64::from(x)).collect()).collect();
        let c = assign_subcarriers(&scores);
        for n in 0..5 {
            let sum: f64 = c.iter().map(|r| r[n]).sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            let best = scores.iter().map(|r| r[n]).fold(f64::INFINITY, f64::min);
            for (k, row) in c.iter().enumerate() {
                prop_assert!(row[n] == 0.0 || scores[k][n] == best);
            }
        }
    }

    #[test]
    fn indicator_is_nonpositive_and_falls_with_rate(
        nu in 1e-6f64..10.0,
        gain in 1e-5f64..1e-1,
        r1 in 1e-3f64..20.0,
        r2 in 1e-3f64..20.0,
    ) {
        let b = 312_500.0;
        let (lo, hi) = if r1 < r2 { (r1, r2) } else { (r2, r1) };
        prop_assume!(hi > lo * (1.0 + 1e-9));
        let a = subcarrier_indicator(nu, gain, b, lo * b, 3.125e-4);
        let z = subcarrier_indicator(nu, gain, b, hi * b, 3.125e-4);
        prop_assert!(a <= 0.0 && z <= 0.0);
        prop_assert!(z < a);
    }

    #[test]
    fn scenarios_survive_a_file_round_trip(
        workers in 1usize..8,
        subcarriers in 1usize..12,
        seed in any::<u64>(),
    ) {
        let s = draw(workers, subcarriers, 1_240_000, seed);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        save_scenario(&s, &path).unwrap();
        prop_assert_eq!(load_scenario(&path).unwrap(), s);
    }
}
