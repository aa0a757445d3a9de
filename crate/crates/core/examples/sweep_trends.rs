//! Median round latency of SUPPORT and the proportional baseline as the number of workers
//! or subcarriers grows, plus both LeNet-5 stages.
//!
//! cargo run --release --example sweep_trends -- [workers|subcarriers] [seeds]

use partel::baselines::Scheme;
use partel::cnn::CnnShape;
use partel::report::{sweep, SweepAxis, SweepBase};
use partel::scenario::DistributionSpec;
use partel::SolverOptions;

fn main() -> partel::Result<()> {
    let mut args = std::env::args().skip(1);
    let axis: SweepAxis = args.next().as_deref().unwrap_or("workers").parse()?;
    let seeds: u64 = args
        .next()
        .map_or(5, |s| s.parse().expect("numeric seed count"));
    let values: Vec<usize> = match axis {
        SweepAxis::Workers => vec![10, 20, 30, 40, 50],
        SweepAxis::Subcarriers => vec![40, 50, 60, 70, 80],
    };
    let base = SweepBase {
        workers: 50,
        subcarriers: 80,
        model_size: 1_240_000,
        dist: DistributionSpec::default(),
        cnn: Some(CnnShape::lenet5()),
    };
    let seed_list: Vec<u64> = (1..=seeds).collect();
    let table = sweep(
        axis,
        &values,
        &base,
        &seed_list,
        &[Scheme::Support, Scheme::Baseline],
        &SolverOptions::default(),
    )?;
    print!("{}", table.to_csv());
    Ok(())
}
