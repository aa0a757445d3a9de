//! Draws a random scenario, minimizes the round latency over relaxed subcarrier shares,
//! rounds the shares to a binary assignment and checks the result against every
//! constraint.
//!
//! cargo run --release --example solve_scenario -- [workers] [subcarriers] [seed]

use std::time::Instant;

use partel::scenario::DistributionSpec;
use partel::{generate_scenario, solver, validate_plan, SolverOptions, SystemConfig};

fn main() -> partel::Result<()> {
    let args: Vec<u64> = std::env::args()
        .skip(1)
        .map(|a| a.parse().expect("numeric argument"))
        .collect();
    let workers = args.first().copied().unwrap_or(10) as usize;
    let subcarriers = args.get(1).copied().unwrap_or(16) as usize;
    let seed = args.get(2).copied().unwrap_or(1);

    let config = SystemConfig::experiment(subcarriers);
    let scenario = generate_scenario(workers, &config, &DistributionSpec::default(), seed)?;
    let opts = SolverOptions::default();

    let start = Instant::now();
    let solution = solver::solve(&scenario, &opts)?;
    let elapsed = start.elapsed();

    let relaxed = &solution.relaxed;
    let rounded = &solution.rounded;
    println!(
        "K={workers} N={subcarriers} seed={seed} L={}",
        config.model_size
    );
    println!(
        "relaxed latency {:.6} s  ({} share updates, gap {:.1e})",
        relaxed.plan.latency, relaxed.iterations, relaxed.duality_gap
    );
    println!("rounded latency {:.6} s", rounded.plan.latency);
    let fractional = (0..subcarriers)
        .filter(|&n| {
            relaxed
                .plan
                .assignment
                .iter()
                .any(|r| r[n] > 1e-9 && r[n] < 1.0 - 1e-9)
        })
        .count();
    println!("fractional subcarriers before rounding: {fractional}");
    for (k, load) in rounded.plan.worker_loads.iter().enumerate() {
        let owned = rounded.plan.assignment[k]
            .iter()
            .filter(|&&c| c == 1.0)
            .count();
        println!("  worker {k:>2}: {load:>12.1} parameters on {owned} subcarriers");
    }
    let report = validate_plan(&rounded.plan, &scenario, None)?;
    println!(
        "rounded plan feasible: {} (worst violation {:.2e})",
        report.feasible, report.worst_violation
    );
    println!("solve time {:.3} s", elapsed.as_secs_f64());
    Ok(())
}
