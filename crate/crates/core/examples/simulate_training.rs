//! Trains a synthetic sparse classifier for a number of rounds under each allocation
//! scheme and prints loss against accumulated latency. The weights are the same for every
//! scheme and for a single-machine run; only the time axis differs.
//!
//! cargo run --release --example simulate_training -- [rounds] [seed]

use partel::baselines::Scheme;
use partel::scenario::DistributionSpec;
use partel::sim::{
    centralized_reference, run_partel, DecomposableModel, Regularizer, SimOptions, SyntheticDataset,
};
use partel::{generate_scenario, SystemConfig};

fn main() -> partel::Result<()> {
    let args: Vec<u64> = std::env::args()
        .skip(1)
        .map(|a| a.parse().expect("numeric argument"))
        .collect();
    let rounds = args.first().copied().unwrap_or(50) as usize;
    let seed = args.get(1).copied().unwrap_or(1);

    let features = 2_000;
    let data = SyntheticDataset::generate(1_000, features, seed)?;
    let model = DecomposableModel::for_dataset(&data, Regularizer::L1, 1e-4);
    let mut config = SystemConfig::experiment(16);
    config.model_size = features as u64;
    let scenario = generate_scenario(10, &config, &DistributionSpec::default(), seed)?;
    let opts = SimOptions {
        rounds,
        ..SimOptions::default()
    };

    let central = centralized_reference(&model, &data, rounds);
    println!("initial loss {:.6}", model.loss(&data));
    for scheme in Scheme::ALL {
        let trace = run_partel(&model, &data, &scenario, scheme, &opts)?;
        let drift = trace
            .final_weights
            .iter()
            .zip(&central.final_weights)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let last = trace.rounds.last().expect("at least one round");
        println!(
            "{scheme:<12} round latency {:.3e} s  total {:.3e} s  final loss {:.6}  max weight drift {drift:.1e}",
            last.latency, last.cumulative_latency, last.loss
        );
    }
    Ok(())
}
