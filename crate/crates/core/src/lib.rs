//! Latency-minimal allocation of subcarriers, model parameters and transmit power for
//! partitioned edge learning over OFDM.
//!
//! A server splits a model of `L` parameters across `K` workers. Each round every worker
//! computes updates for its share and uploads them over its OFDM subcarriers. The crate
//! chooses who gets which subcarrier, how many parameters each worker owns and how much
//! power each link uses, so that the round finishes as early as possible under per-worker
//! energy budgets.

pub mod baselines;
pub mod cnn;
pub mod cost_model;
pub mod error;
pub mod oracle;
pub mod report;
pub mod scenario;
pub mod sim;
pub mod solver;

pub use cost_model::{validate_plan, AllocationPlan, ConstraintReport};
pub use error::{Error, Result};
pub use scenario::{generate_scenario, load_scenario, save_scenario, Scenario, SystemConfig};
pub use solver::{SolveResult, SolverOptions};
