use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use partel::baselines::Scheme;
use partel::cnn::{plan_cnn_round, CnnShape};
use partel::report::{compare_schemes, reports_to_csv, sweep, SweepAxis, SweepBase};
use partel::scenario::DistributionSpec;
use partel::sim::{run_partel, DecomposableModel, Regularizer, SimOptions, SyntheticDataset};
use partel::{generate_scenario, load_scenario, save_scenario, Error, Scenario, SolverOptions};

/// Latency-minimal subcarrier, load and power allocation for partitioned edge learning.
#[derive(Parser)]
#[command(name = "partel", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a random scenario and write it as JSON.
    Gen {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Solve one scenario with one scheme.
    Solve {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value = "support")]
        scheme: Scheme,
        #[command(flatten)]
        output: OutputArgs,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Run several schemes on the same scenario.
    Compare {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Schemes to run, comma separated.
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "support,baseline,greedy-feel"
        )]
        scheme: Vec<Scheme>,
        #[command(flatten)]
        output: OutputArgs,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Median latency over seeds while varying the number of workers or subcarriers.
    Sweep {
        #[arg(long, default_value = "workers")]
        axis: SweepAxis,
        /// Increasing axis values, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<usize>,
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Number of seeds, starting at --seed.
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(long, value_delimiter = ',', default_value = "support,baseline")]
        scheme: Vec<Scheme>,
        /// Also plan both LeNet-5 stages.
        #[arg(long)]
        cnn: bool,
        #[command(flatten)]
        output: OutputArgs,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Train a synthetic decomposable model and record loss against latency.
    Simulate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value = "support")]
        scheme: Scheme,
        #[arg(long, default_value_t = 50)]
        rounds: usize,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        /// Use an L1 regularizer instead of L2.
        #[arg(long)]
        l1: bool,
        /// Redraw the channels and re-plan every round.
        #[arg(long)]
        redraw: bool,
        #[command(flatten)]
        output: OutputArgs,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Plan both stages of one LeNet-5 iteration with whole-subproblem loads.
    PlanCnn {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[command(flatten)]
        output: OutputArgs,
        #[command(flatten)]
        solver: SolverArgs,
    },
}

#[derive(Args)]
struct ScenarioArgs {
    /// Read the scenario from this file instead of drawing one.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 50)]
    workers: usize,
    #[arg(long, default_value_t = 80)]
    subcarriers: usize,
    /// Parameters per round; defaults to 1 240 000 (2 000 for simulate).
    #[arg(long)]
    model_size: Option<u64>,
}

impl ScenarioArgs {
    fn resolve(&self, default_size: u64) -> partel::Result<Scenario> {
        let mut s = match &self.scenario {
            Some(path) => load_scenario(path)?,
            None => {
                let config = partel::SystemConfig::experiment(self.subcarriers);
                generate_scenario(
                    self.workers,
                    &config,
                    &DistributionSpec::default(),
                    self.seed,
                )?
            }
        };
        if self.scenario.is_none() || self.model_size.is_some() {
            s.config.model_size = self.model_size.unwrap_or(default_size);
        }
        s.validate()?;
        Ok(s)
    }
}

#[derive(Args)]
struct OutputArgs {
    /// Write the main output here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write full plans as JSON to this file.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Include solver wall-clock time (makes output non-reproducible).
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct SolverArgs {
    /// Relative tolerance of the latency bisection.
    #[arg(long, allow_negative_numbers = true)]
    tol: Option<f64>,
}

impl SolverArgs {
    fn options(&self) -> SolverOptions {
        let mut opts = SolverOptions::default();
        if let Some(tol) = self.tol {
            opts.latency_tolerance = tol;
        }
        opts
    }
}

fn write_text(path: Option<&Path>, text: &str) -> partel::Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|source| Error::Io {
            path: p.to_path_buf(),
            source,
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn write_json<T: serde::Serialize>(path: Option<&Path>, value: &T) -> partel::Result<()> {
    let Some(p) = path else { return Ok(()) };
    let text = serde_json::to_string_pretty(value).expect("reports serialize") + "\n";
    write_text(Some(p), &text)
}

fn run(cli: Cli) -> partel::Result<bool> {
    const FULL_SIZE: u64 = 1_240_000;
    match cli.command {
        Command::Gen { scenario, output } => {
            let s = scenario.resolve(FULL_SIZE)?;
            match &output.out {
                Some(p) => save_scenario(&s, p)?,
                None => println!(
                    "{}",
                    serde_json::to_string_pretty(&s).expect("serializable")
                ),
            }
            Ok(true)
        }
        Command::Solve {
            scenario,
            scheme,
            output,
            solver,
        } => {
            let s = scenario.resolve(FULL_SIZE)?;
            let mut reports = compare_schemes(&s, &[scheme], &solver.options(), output.timing)?;
            reports[0].scenario_path = scenario.scenario.as_ref().map(|p| p.display().to_string());
            write_text(output.out.as_deref(), &reports_to_csv(&reports))?;
            write_json(output.json.as_deref(), &reports)?;
            Ok(reports[0].constraints.feasible)
        }
        Command::Compare {
            scenario,
            scheme,
            output,
            solver,
        } => {
            let s = scenario.resolve(FULL_SIZE)?;
            let mut reports = compare_schemes(&s, &scheme, &solver.options(), output.timing)?;
            for r in &mut reports {
                r.scenario_path = scenario.scenario.as_ref().map(|p| p.display().to_string());
            }
            write_text(output.out.as_deref(), &reports_to_csv(&reports))?;
            write_json(output.json.as_deref(), &reports)?;
            Ok(reports.iter().all(|r| r.constraints.feasible))
        }
        Command::Sweep {
            axis,
            values,
            scenario,
            seeds,
            scheme,
            cnn,
            output,
            solver,
        } => {
            let base = SweepBase {
                workers: scenario.workers,
                subcarriers: scenario.subcarriers,
                model_size: scenario.model_size.unwrap_or(FULL_SIZE),
                dist: DistributionSpec::default(),
                cnn: cnn.then(CnnShape::lenet5),
            };
            let seed_list: Vec<u64> = (scenario.seed..scenario.seed + seeds).collect();
            let table = sweep(axis, &values, &base, &seed_list, &scheme, &solver.options())?;
            write_text(output.out.as_deref(), &table.to_csv())?;
            write_json(output.json.as_deref(), &table)?;
            Ok(true)
        }
        Command::Simulate {
            scenario,
            scheme,
            rounds,
            samples,
            l1,
            redraw,
            output,
            solver,
        } => {
            let s = scenario.resolve(2_000)?;
            let features = s.config.model_size as usize;
            let data = SyntheticDataset::generate(samples, features, scenario.seed)?;
            let reg = if l1 { Regularizer::L1 } else { Regularizer::L2 };
            let model = DecomposableModel::for_dataset(&data, reg, 1e-3);
            let opts = SimOptions {
                rounds,
                redraw_channels: redraw,
                solver: solver.options(),
                ..SimOptions::default()
            };
            let trace = run_partel(&model, &data, &s, scheme, &opts)?;
            write_text(output.out.as_deref(), &trace.to_csv())?;
            write_json(output.json.as_deref(), &trace)?;
            Ok(true)
        }
        Command::PlanCnn {
            scenario,
            output,
            solver,
        } => {
            let s = scenario.resolve(FULL_SIZE)?;
            let round = plan_cnn_round(&s, &CnnShape::lenet5(), &solver.options())?;
            let mut text = String::from(
                "stage,subproblem_size,stage_size,base_latency,latency,cutoff,cutoff_indicator\n",
            );
            for st in [&round.w_stage, &round.z_stage] {
                let g = st.granularity;
                let r = &st.rounding;
                text.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    g.stage,
                    g.subproblem_size,
                    g.stage_size,
                    r.base_latency,
                    st.latency(),
                    r.cutoff,
                    r.cutoff_indicator
                ));
            }
            write_text(output.out.as_deref(), &text)?;
            write_json(output.json.as_deref(), &round)?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    // Usage errors exit with 1; clap's own default (2) is reserved for infeasibility.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: the plan violates its constraints");
            ExitCode::from(2)
        }
        Err(e) if e.is_infeasible() => {
            eprintln!("infeasible: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
