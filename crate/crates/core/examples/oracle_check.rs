//! Compares the solver with exhaustive enumeration on tiny scenarios: the two-worker
//! reference case and random draws with at most three workers and four subcarriers.
//!
//! cargo run --release --example oracle_check -- [random scenarios] [first seed]

use partel::oracle::{brute_force_min_latency, reference_scenario, OracleGrids};
use partel::scenario::DistributionSpec;
use partel::{generate_scenario, solver, Scenario, SolverOptions, SystemConfig};

fn compare(label: &str, scenario: &Scenario) -> partel::Result<()> {
    let size = scenario.config.model_size as f64;
    let oracle = brute_force_min_latency(scenario, size, &OracleGrids::default())?;
    let solution = solver::solve(scenario, &SolverOptions::default())?;
    let t = solution.rounded.plan.latency;
    println!(
        "{label:<14} K={} N={}  oracle {:.6} s (grid {})  relaxed {:.6} s  rounded {:.6} s  gap {:+.3}%",
        scenario.num_workers(),
        scenario.num_subcarriers(),
        oracle.latency,
        oracle.load_points,
        solution.relaxed.plan.latency,
        t,
        100.0 * (t - oracle.latency) / oracle.latency
    );
    Ok(())
}

fn main() -> partel::Result<()> {
    let args: Vec<u64> = std::env::args()
        .skip(1)
        .map(|a| a.parse().expect("numeric argument"))
        .collect();
    let count = args.first().copied().unwrap_or(19);
    let first = args.get(1).copied().unwrap_or(1);

    compare("reference", &reference_scenario())?;
    for seed in first..first + count {
        let workers = 2 + (seed % 2) as usize;
        let subcarriers = 2 + (seed % 3) as usize;
        let mut config = SystemConfig::experiment(subcarriers);
        config.model_size = 100_000;
        let scenario = generate_scenario(workers, &config, &DistributionSpec::default(), seed)?;
        compare(&format!("seed {seed}"), &scenario)?;
    }
    Ok(())
}
