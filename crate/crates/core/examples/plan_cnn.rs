//! Plans both stages of one LeNet-5 training iteration: weight updates split by neuron,
//! auxiliary updates split by sample. Prints the unconstrained latency of each stage,
//! how the loads were rounded and the latency bound of the rounding.
//!
//! cargo run --release --example plan_cnn -- [workers] [subcarriers] [seed]

use std::time::Instant;

use partel::cnn::{plan_cnn_round, CnnShape};
use partel::scenario::DistributionSpec;
use partel::{generate_scenario, validate_plan, SolverOptions, SystemConfig};

fn main() -> partel::Result<()> {
    let args: Vec<u64> = std::env::args()
        .skip(1)
        .map(|a| a.parse().expect("numeric argument"))
        .collect();
    let workers = args.first().copied().unwrap_or(30) as usize;
    let subcarriers = args.get(1).copied().unwrap_or(50) as usize;
    let seed = args.get(2).copied().unwrap_or(1);

    let scenario = generate_scenario(
        workers,
        &SystemConfig::experiment(subcarriers),
        &DistributionSpec::default(),
        seed,
    )?;
    let shape = CnnShape::lenet5();
    let start = Instant::now();
    let round = plan_cnn_round(&scenario, &shape, &SolverOptions::default())?;
    let elapsed = start.elapsed();

    for stage in [&round.w_stage, &round.z_stage] {
        let g = stage.granularity;
        let r = &stage.rounding;
        let mut stage_scenario = scenario.clone();
        stage_scenario.config.model_size = g.stage_size;
        let report = validate_plan(&stage.plan, &stage_scenario, Some(g.subproblem_size as f64))?;
        println!(
            "{}-stage: {} parameters in {} subproblems of {}",
            g.stage,
            g.stage_size,
            g.subproblems(),
            g.subproblem_size
        );
        println!("  unconstrained latency {:.6} s", r.base_latency);
        println!(
            "  {} workers round up, cutoff indicator {:.4}, bound {:.6} s",
            r.cutoff, r.cutoff_indicator, r.latency_bound
        );
        let units: Vec<u64> = stage
            .plan
            .worker_loads
            .iter()
            .map(|&l| (l / g.subproblem_size as f64).round() as u64)
            .collect();
        println!("  subproblems per worker {units:?}");
        println!(
            "  rounded latency {:.6} s, feasible {}",
            stage.latency(),
            report.feasible
        );
    }
    println!("iteration latency {:.6} s", round.total_latency());
    println!("planned in {:.2?}", elapsed);
    Ok(())
}
