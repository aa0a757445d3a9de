//! Allocation for models trained by independent subproblems (neurons, per-sample
//! auxiliary matrices). A worker's load must be a whole number of subproblems.
//!
//! Each stage is first solved without that constraint. Loads are then rounded: workers
//! whose round-up costs the least relative extra work round up, everybody else rounds
//! down, and round-up workers spread their extra parameters over their subcarriers in
//! proportion to what each already uploads. Shares and rates stay unchanged, so a worker
//! whose load grows by a factor `1 + I` finishes at most `T* I` later.

use serde::{Deserialize, Serialize};

use crate::cost_model::AllocationPlan;
use crate::error::{Error, Result};
use crate::scenario::Scenario;
use crate::solver::{min_latency, round_subcarriers_exhaustive, SolveResult, SolverOptions};

/// Relative distance to a multiple of the granularity below which a load counts as a multiple.
const MULTIPLE_SNAP: f64 = 1e-9;

/// Layer structure of a network trained by independent subproblems.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnShape {
    /// Independent units (feature maps or neurons) per layer.
    pub layer_neuron_counts: Vec<u64>,
    /// Trainable parameters of the whole network.
    pub total_params: u64,
    /// Samples per mini batch.
    pub batch_size: u64,
}

impl CnnShape {
    pub fn new(layer_neuron_counts: Vec<u64>, total_params: u64, batch_size: u64) -> Result<Self> {
        let shape = CnnShape {
            layer_neuron_counts,
            total_params,
            batch_size,
        };
        shape.validate()?;
        Ok(shape)
    }

    /// LeNet-5 on MNIST: 6 + 16 + 120 feature maps, an 84-neuron dense layer, 60 000
    /// parameters, batches of 50.
    pub fn lenet5() -> Self {
        CnnShape {
            layer_neuron_counts: vec![6, 16, 120, 84],
            total_params: 60_000,
            batch_size: 50,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_neuron_counts.is_empty() {
            return Err(Error::validation("layer_neuron_counts", "no layers"));
        }
        if self.layer_neuron_counts.contains(&0) {
            return Err(Error::validation(
                "layer_neuron_counts",
                "every layer needs a unit",
            ));
        }
        if self.total_params == 0 {
            return Err(Error::validation("total_params", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::validation("batch_size", "must be at least 1"));
        }
        if self.total_neurons() > self.total_params {
            return Err(Error::validation(
                "total_params",
                "fewer parameters than neurons",
            ));
        }
        Ok(())
    }

    pub fn total_neurons(&self) -> u64 {
        self.layer_neuron_counts.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    /// Weight updates, one subproblem per neuron.
    W,
    /// Auxiliary-variable updates, one subproblem per sample.
    Z,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::W => "W",
            Stage::Z => "Z",
        })
    }
}

/// Size of one indivisible subproblem and of the whole stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GranularitySpec {
    pub stage: Stage,
    /// Parameters per subproblem.
    pub subproblem_size: u64,
    /// Parameters the stage must update.
    pub stage_size: u64,
}

impl GranularitySpec {
    pub fn subproblems(&self) -> u64 {
        self.stage_size.div_ceil(self.subproblem_size)
    }
}

/// Subproblem and stage sizes. Neurons are taken to be of equal size, so a W-stage
/// subproblem holds `ceil(L / sum I)` parameters; a Z-stage subproblem is one sample's
/// auxiliary matrix with one entry per neuron.
pub fn stage_granularity(shape: &CnnShape, stage: Stage) -> GranularitySpec {
    let neurons = shape.total_neurons();
    match stage {
        Stage::W => GranularitySpec {
            stage,
            subproblem_size: shape.total_params.div_ceil(neurons),
            stage_size: shape.total_params,
        },
        Stage::Z => GranularitySpec {
            stage,
            subproblem_size: neurons,
            stage_size: neurons * shape.batch_size,
        },
    }
}

/// Parameters to add (`up`) or drop (`down`) to reach a multiple of `subproblem_size`, and
/// the round-up indicator `up / load` (infinite for idle workers).
#[derive(Debug, Clone, PartialEq)]
pub struct RoundingDeltas {
    pub up: Vec<f64>,
    pub down: Vec<f64>,
    pub indicator: Vec<f64>,
}

pub fn compute_rounding_deltas(loads: &[f64], subproblem_size: f64) -> RoundingDeltas {
    let mut up = Vec::with_capacity(loads.len());
    let mut down = Vec::with_capacity(loads.len());
    let mut indicator = Vec::with_capacity(loads.len());
    for &l in loads {
        let units = l / subproblem_size;
        let nearest = units.round();
        let (d, u) = if (units - nearest).abs() <= MULTIPLE_SNAP * units.max(1.0) {
            (0.0, 0.0)
        } else {
            let d = l - units.floor() * subproblem_size;
            (d, subproblem_size - d)
        };
        down.push(d);
        up.push(u);
        indicator.push(if l > 0.0 { u / l } else { f64::INFINITY });
    }
    RoundingDeltas {
        up,
        down,
        indicator,
    }
}

/// Workers sorted by indicator (ties by index) and the number that round up: the
/// smallest prefix whose added parameters cover what the remaining workers drop.
pub fn select_roundup_set(deltas: &RoundingDeltas) -> (Vec<usize>, usize) {
    let k_count = deltas.up.len();
    let mut order: Vec<usize> = (0..k_count).collect();
    order.sort_by(|&a, &b| {
        deltas.indicator[a]
            .total_cmp(&deltas.indicator[b])
            .then(a.cmp(&b))
    });
    let mut added = 0.0;
    let mut dropped: f64 = order.iter().map(|&k| deltas.down[k]).sum();
    let mut cutoff = 0;
    while added < dropped && cutoff < k_count {
        let k = order[cutoff];
        added += deltas.up[k];
        dropped -= deltas.down[k];
        cutoff += 1;
    }
    assert!(
        added >= dropped,
        "rounding every worker up always covers the drops"
    );
    (order, cutoff)
}

/// Outcome of rounding one stage's loads to whole subproblems.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnRoundingPlan {
    pub delta_up: Vec<f64>,
    pub delta_down: Vec<f64>,
    /// Infinite for idle workers (`null` in JSON).
    #[serde(with = "infinite_as_null")]
    pub indicator: Vec<f64>,
    /// Workers by increasing indicator.
    pub order: Vec<usize>,
    /// Number of workers (leading `order`) that round up.
    pub cutoff: usize,
    /// Indicator of the last round-up worker, 0 when nobody rounds up.
    pub cutoff_indicator: f64,
    /// Signed change of every subcarrier load.
    pub extra_loads: Vec<Vec<f64>>,
    /// Bound `T* I` on the additional round latency.
    pub latency_bound: f64,
    /// Unconstrained latency `T*`.
    pub base_latency: f64,
    /// Additional finishing time of each worker (0 when it got faster).
    pub added_latency: Vec<f64>,
    /// Some loaded worker holds less than one subproblem.
    pub coarse: bool,
}

/// Rounds the loads of a binary-share result to multiples of `spec.subproblem_size`.
/// The returned plan keeps shares and rates and runs at `T* (1 + I)` for the cutoff
/// indicator `I`.
pub fn apply_cnn_rounding(
    result: &SolveResult,
    scenario: &Scenario,
    spec: &GranularitySpec,
) -> Result<(AllocationPlan, CnnRoundingPlan)> {
    let base = &result.plan;
    base.check_dims(scenario)?;
    if !base.is_binary() {
        return Err(Error::validation(
            "assignment",
            "granularity rounding needs binary shares",
        ));
    }
    let sub = spec.subproblem_size as f64;
    let loads = &base.worker_loads;
    let deltas = compute_rounding_deltas(loads, sub);
    let (order, cutoff) = select_roundup_set(&deltas);
    let mut rounds_up = vec![false; loads.len()];
    for &k in &order[..cutoff] {
        rounds_up[k] = true;
    }

    let t_star = base.latency;
    let mut plan = base.clone();
    let mut extra_loads = vec![vec![0.0; base.num_subcarriers()]; base.num_workers()];
    for (k, &l) in loads.iter().enumerate() {
        if l <= 0.0 {
            plan.worker_loads[k] = 0.0;
            continue;
        }
        let units = if deltas.up[k] == 0.0 && deltas.down[k] == 0.0 {
            (l / sub).round()
        } else if rounds_up[k] {
            (l / sub).floor() + 1.0
        } else {
            (l / sub).floor()
        };
        let rounded = units * sub;
        let scale = rounded / l;
        plan.worker_loads[k] = rounded;
        for n in 0..base.num_subcarriers() {
            let old = base.subcarrier_loads[k][n];
            let new = old * scale;
            plan.subcarrier_loads[k][n] = new;
            extra_loads[k][n] = new - old;
        }
    }

    let cutoff_indicator = if cutoff == 0 {
        0.0
    } else {
        deltas.indicator[order[cutoff - 1]]
    };
    plan.latency = t_star * (1.0 + cutoff_indicator);

    let mut added_latency = Vec::with_capacity(loads.len());
    for k in 0..loads.len() {
        let before = finish_time(base, scenario, k)?;
        let after = finish_time(&plan, scenario, k)?;
        added_latency.push((after - before).max(0.0));
    }

    let coarse = loads.iter().any(|&l| l > 0.0 && l < sub);
    let rounding = CnnRoundingPlan {
        delta_up: deltas.up,
        delta_down: deltas.down,
        indicator: deltas.indicator,
        order,
        cutoff,
        cutoff_indicator,
        extra_loads,
        latency_bound: t_star * cutoff_indicator,
        base_latency: t_star,
        added_latency,
        coarse,
    };
    Ok((plan, rounding))
}

fn finish_time(plan: &AllocationPlan, scenario: &Scenario, k: usize) -> Result<f64> {
    if plan.worker_loads[k] <= 0.0 {
        return Ok(0.0);
    }
    let lat = crate::cost_model::worker_latency(plan, scenario, k)?;
    Ok(lat.total)
}

/// One stage: unconstrained solve, binary shares, then whole subproblems.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagePlan {
    pub granularity: GranularitySpec,
    /// Binary-share solution before granularity rounding.
    pub unconstrained: SolveResult,
    pub plan: AllocationPlan,
    pub rounding: CnnRoundingPlan,
}

impl StagePlan {
    pub fn latency(&self) -> f64 {
        self.plan.latency
    }
}

/// Both stages of one training iteration. The stages run one after the other.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnRoundPlan {
    pub w_stage: StagePlan,
    pub z_stage: StagePlan,
}

impl CnnRoundPlan {
    pub fn total_latency(&self) -> f64 {
        self.w_stage.latency() + self.z_stage.latency()
    }
}

/// Copy of `scenario` whose model size is the stage size.
pub fn stage_scenario(scenario: &Scenario, spec: &GranularitySpec) -> Scenario {
    let mut s = scenario.clone();
    s.config.model_size = spec.stage_size;
    s
}

pub fn plan_stage(
    scenario: &Scenario,
    spec: &GranularitySpec,
    opts: &SolverOptions,
) -> Result<StagePlan> {
    let s = stage_scenario(scenario, spec);
    let size = spec.stage_size as f64;
    let relaxed = min_latency(&s, size, opts)?;
    let unconstrained = round_subcarriers_exhaustive(&relaxed, &s, size, opts)?;
    let (plan, rounding) = apply_cnn_rounding(&unconstrained, &s, spec)?;
    Ok(StagePlan {
        granularity: *spec,
        unconstrained,
        plan,
        rounding,
    })
}

pub fn plan_cnn_round(
    scenario: &Scenario,
    shape: &CnnShape,
    opts: &SolverOptions,
) -> Result<CnnRoundPlan> {
    shape.validate()?;
    let w = plan_stage(scenario, &stage_granularity(shape, Stage::W), opts)?;
    let z = plan_stage(scenario, &stage_granularity(shape, Stage::Z), opts)?;
    Ok(CnnRoundPlan {
        w_stage: w,
        z_stage: z,
    })
}

mod infinite_as_null {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let opt: Vec<Option<f64>> = v.iter().map(|&x| x.is_finite().then_some(x)).collect();
        opt.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let opt = Vec::<Option<f64>>::deserialize(d)?;
        Ok(opt
            .into_iter()
            .map(|x| x.unwrap_or(f64::INFINITY))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost_model::validate_plan;
    use crate::scenario::{generate_scenario, DistributionSpec, SystemConfig};

    #[test]
    fn lenet_granularity() {
        let shape = CnnShape::lenet5();
        let w = stage_granularity(&shape, Stage::W);
        assert_eq!(w.subproblems(), 226);
        assert_eq!(w.subproblem_size, 266);
        let z = stage_granularity(&shape, Stage::Z);
        assert_eq!(z.subproblem_size, 226);
        assert_eq!(z.subproblems(), 50);
        assert_eq!(z.stage_size, 50 * 226);
    }

    #[test]
    fn single_neuron_cannot_be_split() {
        let shape = CnnShape::new(vec![1], 500, 4).unwrap();
        assert_eq!(stage_granularity(&shape, Stage::W).subproblem_size, 500);
    }

    #[test]
    fn hand_traced_rounding() {
        let d = compute_rounding_deltas(&[230.0, 370.0, 400.0], 100.0);
        assert_eq!(d.down, vec![30.0, 70.0, 0.0]);
        assert_eq!(d.up, vec![70.0, 30.0, 0.0]);
        assert!((d.indicator[0] - 70.0 / 230.0).abs() < 1e-15);
        assert!((d.indicator[1] - 30.0 / 370.0).abs() < 1e-15);
        let (order, cutoff) = select_roundup_set(&d);
        assert_eq!(order, vec![2, 1, 0]);
        assert_eq!(cutoff, 2);
    }

    #[test]
    fn exact_multiples_stay() {
        let d = compute_rounding_deltas(&[200.0, 0.0, 700.0], 100.0);
        assert_eq!(d.up, vec![0.0; 3]);
        assert_eq!(d.down, vec![0.0; 3]);
        assert!(d.indicator[1].is_infinite());
        assert_eq!(select_roundup_set(&d).1, 0);
    }

    #[test]
    fn single_worker_rounds_up() {
        let d = compute_rounding_deltas(&[230.0], 100.0);
        assert_eq!(select_roundup_set(&d).1, 1);
    }

    #[test]
    fn stage_plan_is_feasible_and_bounded() {
        let cfg = SystemConfig::experiment(12);
        let s = generate_scenario(6, &cfg, &DistributionSpec::default(), 3).unwrap();
        let shape = CnnShape::lenet5();
        let round = plan_cnn_round(&s, &shape, &SolverOptions::default()).unwrap();
        for stage in [&round.w_stage, &round.z_stage] {
            let spec = stage.granularity;
            let ss = stage_scenario(&s, &spec);
            let report =
                validate_plan(&stage.plan, &ss, Some(spec.subproblem_size as f64)).unwrap();
            assert!(report.feasible, "{report:?}");
            let realized = crate::cost_model::realized_latency(&stage.plan, &ss).unwrap();
            let r = &stage.rounding;
            assert!(realized <= r.base_latency * (1.0 + r.cutoff_indicator) * (1.0 + 1e-12));
        }
        assert!(round.total_latency() > round.w_stage.latency());
        let json = serde_json::to_string(&round).unwrap();
        let back: CnnRoundPlan = serde_json::from_str(&json).unwrap();
        assert_eq!(back, round);
    }
}
