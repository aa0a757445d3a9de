//! Runs the joint allocation, the compute-proportional baseline and greedy federated
//! learning on the same random scenarios and prints their round latencies.
//!
//! cargo run --release --example compare_schemes -- [workers] [subcarriers] [seeds]

use std::time::Instant;

use partel::baselines::{run_scheme, Scheme};
use partel::scenario::DistributionSpec;
use partel::{generate_scenario, SolverOptions, SystemConfig};

fn main() -> partel::Result<()> {
    let args: Vec<u64> = std::env::args()
        .skip(1)
        .map(|a| a.parse().expect("numeric argument"))
        .collect();
    let workers = args.first().copied().unwrap_or(50) as usize;
    let subcarriers = args.get(1).copied().unwrap_or(80) as usize;
    let seeds = args.get(2).copied().unwrap_or(5);

    let config = SystemConfig::experiment(subcarriers);
    let opts = SolverOptions::default();
    println!("seed  support[s]  baseline[s]  greedy-feel[s]  vs-baseline  vs-feel");
    let mut reductions = (0.0, 0.0);
    for seed in 0..seeds {
        let scenario = generate_scenario(workers, &config, &DistributionSpec::default(), seed)?;
        let mut latency = [0.0; 3];
        let mut times = [0.0; 3];
        for (i, scheme) in Scheme::ALL.into_iter().enumerate() {
            let start = Instant::now();
            latency[i] = run_scheme(scheme, &scenario, &opts)?.plan.latency;
            times[i] = start.elapsed().as_secs_f64();
        }
        let vs_base = (latency[1] - latency[0]) / latency[1];
        let vs_feel = (latency[2] - latency[0]) / latency[2];
        reductions.0 += vs_base;
        reductions.1 += vs_feel;
        println!(
            "{seed:>4}  {:>10.4}  {:>11.4}  {:>14.4}  {:>10.1}%  {:>6.1}%   ({:.2}/{:.2}/{:.2} s)",
            latency[0],
            latency[1],
            latency[2],
            100.0 * vs_base,
            100.0 * vs_feel,
            times[0],
            times[1],
            times[2]
        );
    }
    let n = seeds as f64;
    println!(
        "mean latency reduction: {:.1}% vs baseline, {:.1}% vs greedy-feel",
        100.0 * reductions.0 / n,
        100.0 * reductions.1 / n
    );
    Ok(())
}
