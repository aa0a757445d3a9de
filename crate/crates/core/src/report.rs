//! Scheme comparisons and parameter sweeps, with delimited-text and JSON output.
//!
//! Reports leave wall-clock time out unless asked, so that identical inputs give
//! byte-identical files.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::baselines::{run_scheme, Scheme};
use crate::cnn::{plan_cnn_round, CnnShape, Stage};
use crate::cost_model::{total_energy, validate_plan, worker_energy, ConstraintReport};
use crate::error::{Error, Result};
use crate::scenario::{generate_scenario, DistributionSpec, Scenario, SystemConfig};
use crate::solver::{SolveResult, SolverOptions};

/// Outcome of one scheme on one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scheme: Scheme,
    pub seed: u64,
    /// File the scenario was read from or written to, when there is one.
    pub scenario_path: Option<String>,
    pub workers: usize,
    pub subcarriers: usize,
    pub model_size: u64,
    pub latency: f64,
    pub worker_loads: Vec<f64>,
    pub worker_energy: Vec<f64>,
    pub total_energy: f64,
    pub constraints: ConstraintReport,
    /// `(T_scheme - T_support) / T_scheme`; absent for SUPPORT itself or when it was not run.
    pub reduction: Option<f64>,
    /// Seconds spent in the solver, only when timing was requested.
    pub solve_seconds: Option<f64>,
    pub plan: SolveResult,
}

impl RunReport {
    pub fn from_result(
        scheme: Scheme,
        scenario: &Scenario,
        result: SolveResult,
        solve_seconds: Option<f64>,
    ) -> Result<Self> {
        let constraints = validate_plan(&result.plan, scenario, None)?;
        let worker_energy = (0..scenario.num_workers())
            .map(|k| worker_energy(&result.plan, scenario, k).map(|e| e.total))
            .collect::<Result<Vec<f64>>>()?;
        Ok(RunReport {
            scheme,
            seed: scenario.seed,
            scenario_path: None,
            workers: scenario.num_workers(),
            subcarriers: scenario.num_subcarriers(),
            model_size: scenario.config.model_size,
            latency: result.plan.latency,
            worker_loads: result.plan.worker_loads.clone(),
            total_energy: total_energy(&result.plan, scenario)?,
            worker_energy,
            constraints,
            reduction: None,
            solve_seconds,
            plan: result,
        })
    }
}

pub fn run_report(
    scheme: Scheme,
    scenario: &Scenario,
    opts: &SolverOptions,
    timing: bool,
) -> Result<RunReport> {
    let start = Instant::now();
    let result = run_scheme(scheme, scenario, opts)?;
    let elapsed = timing.then(|| start.elapsed().as_secs_f64());
    RunReport::from_result(scheme, scenario, result, elapsed)
}

/// Runs every scheme on the same scenario and fills in the reduction column relative to
/// SUPPORT.
pub fn compare_schemes(
    scenario: &Scenario,
    schemes: &[Scheme],
    opts: &SolverOptions,
    timing: bool,
) -> Result<Vec<RunReport>> {
    if schemes.is_empty() {
        return Err(Error::validation(
            "schemes",
            "at least one scheme is needed",
        ));
    }
    let mut reports = schemes
        .iter()
        .map(|&s| run_report(s, scenario, opts, timing))
        .collect::<Result<Vec<_>>>()?;
    fill_reductions(&mut reports);
    Ok(reports)
}

fn fill_reductions(reports: &mut [RunReport]) {
    let support = reports
        .iter()
        .find(|r| r.scheme == Scheme::Support)
        .map(|r| r.latency);
    for r in reports.iter_mut() {
        r.reduction = match support {
            Some(t) if r.scheme != Scheme::Support => Some((r.latency - t) / r.latency),
            _ => None,
        };
    }
}

pub const REPORT_HEADER: &str =
    "scheme,seed,workers,subcarriers,model_size,latency,total_energy,feasible,reduction";

/// One header row plus one row per report. A `solve_seconds` column is added when any
/// report carries a timing.
pub fn reports_to_csv(reports: &[RunReport]) -> String {
    let timed = reports.iter().any(|r| r.solve_seconds.is_some());
    let mut out = String::from(REPORT_HEADER);
    if timed {
        out.push_str(",solve_seconds");
    }
    out.push('\n');
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}",
            r.scheme,
            r.seed,
            r.workers,
            r.subcarriers,
            r.model_size,
            r.latency,
            r.total_energy,
            r.constraints.feasible,
            r.reduction.map(|x| x.to_string()).unwrap_or_default()
        ));
        if timed {
            out.push(',');
            out.push_str(&r.solve_seconds.map(|x| x.to_string()).unwrap_or_default());
        }
        out.push('\n');
    }
    out
}

/// Sample mean and a normal-approximation 95% confidence half-width.
pub fn mean_with_interval(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * (var / n).sqrt())
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Workers,
    Subcarriers,
}

impl std::fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SweepAxis::Workers => "workers",
            SweepAxis::Subcarriers => "subcarriers",
        })
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "workers" => Ok(SweepAxis::Workers),
            "subcarriers" => Ok(SweepAxis::Subcarriers),
            other => Err(Error::validation(
                "axis",
                format!("unknown axis `{other}` (expected workers or subcarriers)"),
            )),
        }
    }
}

/// A latency series in a sweep: a scheme on the decomposable model, or one stage of the
/// CNN planner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Series {
    Scheme(Scheme),
    CnnStage(Stage),
}

impl std::fmt::Display for Series {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Series::Scheme(s) => write!(f, "{s}"),
            Series::CnnStage(Stage::W) => f.write_str("cnn-w"),
            Series::CnnStage(Stage::Z) => f.write_str("cnn-z"),
        }
    }
}

/// Fixed part of a sweep; the swept axis overrides one field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepBase {
    pub workers: usize,
    pub subcarriers: usize,
    pub model_size: u64,
    pub dist: DistributionSpec,
    /// Set to also plan CNN stages for this shape.
    pub cnn: Option<CnnShape>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: usize,
    pub series: String,
    pub median_latency: f64,
    pub mean_latency: f64,
    /// Latency per seed, in seed order.
    pub latencies: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub seeds: Vec<u64>,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("axis,value,series,median_latency,mean_latency,seeds\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.axis,
                r.value,
                r.series,
                r.median_latency,
                r.mean_latency,
                r.latencies.len()
            ));
        }
        out
    }

    /// Median latencies of one series in value order.
    pub fn medians(&self, series: &str) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.series == series)
            .map(|r| r.median_latency)
            .collect()
    }
}

/// Median latency per (value, series) over the seeds. Each (value, seed) scenario is drawn
/// once and shared by all series.
pub fn sweep(
    axis: SweepAxis,
    values: &[usize],
    base: &SweepBase,
    seeds: &[u64],
    schemes: &[Scheme],
    opts: &SolverOptions,
) -> Result<SweepTable> {
    if values.is_empty() || seeds.is_empty() {
        return Err(Error::validation(
            "sweep",
            "needs at least one value and one seed",
        ));
    }
    if values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::validation("values", "must be strictly increasing"));
    }
    let mut series: Vec<Series> = schemes.iter().map(|&s| Series::Scheme(s)).collect();
    if base.cnn.is_some() {
        series.push(Series::CnnStage(Stage::W));
        series.push(Series::CnnStage(Stage::Z));
    }
    let jobs: Vec<(usize, u64)> = values
        .iter()
        .flat_map(|&v| seeds.iter().map(move |&s| (v, s)))
        .collect();
    let outcomes = fan_out(&jobs, |&(value, seed)| {
        let (workers, subcarriers) = match axis {
            SweepAxis::Workers => (value, base.subcarriers),
            SweepAxis::Subcarriers => (base.workers, value),
        };
        let mut config = SystemConfig::experiment(subcarriers);
        config.model_size = base.model_size;
        let scenario = generate_scenario(workers, &config, &base.dist, seed)?;
        let mut out = Vec::with_capacity(series.len());
        for &s in schemes {
            out.push(run_scheme(s, &scenario, opts)?.plan.latency);
        }
        if let Some(shape) = &base.cnn {
            let round = plan_cnn_round(&scenario, shape, opts)?;
            out.push(round.w_stage.latency());
            out.push(round.z_stage.latency());
        }
        Ok(out)
    });
    let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    for (vi, &value) in values.iter().enumerate() {
        for (si, s) in series.iter().enumerate() {
            let latencies: Vec<f64> = (0..seeds.len())
                .map(|j| outcomes[vi * seeds.len() + j][si])
                .collect();
            rows.push(SweepRow {
                axis,
                value,
                series: s.to_string(),
                median_latency: median(&latencies),
                mean_latency: latencies.iter().sum::<f64>() / latencies.len() as f64,
                latencies,
            });
        }
    }
    Ok(SweepTable {
        seeds: seeds.to_vec(),
        rows,
    })
}

/// Applies `f` to every job on up to `available_parallelism` threads; results come back in
/// job order.
pub fn fan_out<J: Sync, T: Send>(jobs: &[J], f: impl Fn(&J) -> T + Sync) -> Vec<T> {
    let threads = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(jobs.len().max(1));
    if threads <= 1 {
        return jobs.iter().map(f).collect();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut slots: Vec<Option<T>> = (0..jobs.len()).map(|_| None).collect();
    let done = std::sync::Mutex::new(Vec::with_capacity(jobs.len()));
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= jobs.len() {
                    break;
                }
                let out = f(&jobs[i]);
                done.lock()
                    .expect("no panics while holding the lock")
                    .push((i, out));
            });
        }
    });
    for (i, out) in done.into_inner().expect("threads joined") {
        slots[i] = Some(out);
    }
    slots
        .into_iter()
        .map(|s| s.expect("every job ran"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario() -> Scenario {
        let cfg = SystemConfig::experiment(8);
        generate_scenario(4, &cfg, &DistributionSpec::default(), 9).unwrap()
    }

    #[test]
    fn singleton_comparison_has_no_reduction() {
        let r = compare_schemes(
            &scenario(),
            &[Scheme::Support],
            &SolverOptions::default(),
            false,
        )
        .unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].reduction, None);
        assert!(r[0].constraints.feasible);
    }

    #[test]
    fn repeated_scheme_gives_identical_reports() {
        let s = scenario();
        let r = compare_schemes(
            &s,
            &[Scheme::Baseline, Scheme::Baseline],
            &SolverOptions::default(),
            false,
        )
        .unwrap();
        assert_eq!(r[0], r[1]);
        let csv = reports_to_csv(&r);
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with(REPORT_HEADER));
    }

    #[test]
    fn reductions_are_relative_to_support() {
        let r =
            compare_schemes(&scenario(), &Scheme::ALL, &SolverOptions::default(), false).unwrap();
        let t = r[0].latency;
        for other in &r[1..] {
            let red = other.reduction.unwrap();
            assert!((red - (other.latency - t) / other.latency).abs() < 1e-15);
            assert!(red >= 0.0);
        }
    }

    #[test]
    fn degenerate_sweep_has_one_row() {
        let base = SweepBase {
            workers: 3,
            subcarriers: 6,
            model_size: 100_000,
            dist: DistributionSpec::default(),
            cnn: None,
        };
        let t = sweep(
            SweepAxis::Workers,
            &[3],
            &base,
            &[1],
            &[Scheme::Support],
            &SolverOptions::default(),
        )
        .unwrap();
        assert_eq!(t.rows.len(), 1);
        assert_eq!(t.to_csv().lines().count(), 2);
    }

    #[test]
    fn median_and_interval() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        let (m, h) = mean_with_interval(&[1.0, 1.0, 1.0]);
        assert_eq!((m, h), (1.0, 0.0));
    }

    #[test]
    fn fan_out_keeps_order() {
        let jobs: Vec<u32> = (0..20).collect();
        assert_eq!(
            fan_out(&jobs, |j| j * 2),
            (0..20).map(|j| j * 2).collect::<Vec<_>>()
        );
    }
}
