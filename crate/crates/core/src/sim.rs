//! Round-by-round replay of allocation plans while training a decomposable model.
//!
//! The model is `F(w) = (1/M) sum_m (y_m - sigmoid(w . x_m))^2 + R(w)` with a separable
//! regularizer `R`. In every round the server broadcasts `w`; each worker computes the
//! gradient of the data term on its own block of coordinates over the whole dataset, and
//! the server applies a fixed-step (proximal for L1) update. The weights therefore follow
//! the centralized iteration exactly, whatever the partition; only the time axis depends
//! on the allocation scheme.
//!
//! Under greedy FEEL every worker owns the whole model and a shard of the samples; the
//! server adds up the shard gradients, which again gives the full gradient.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::baselines::{run_scheme, Scheme};
use crate::cost_model::{validate_plan, worker_energy};
use crate::error::{Error, Result};
use crate::scenario::Scenario;
use crate::solver::{SolveResult, SolverOptions};

/// Fraction of nonzero coordinates in the weights that generate the labels.
const TRUE_DENSITY: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDataset {
    /// `M` rows of `L` features.
    pub features: Vec<Vec<f64>>,
    /// Binary labels in `{0, 1}`.
    pub labels: Vec<f64>,
    pub seed: u64,
}

impl SyntheticDataset {
    /// Gaussian features scaled by `1/sqrt(L)`; labels drawn from a logistic model with
    /// sparse ground-truth weights.
    pub fn generate(num_samples: usize, num_features: usize, seed: u64) -> Result<Self> {
        if num_samples < 1 || num_features < 1 {
            return Err(Error::validation(
                "dataset",
                "needs at least one sample and one feature",
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (num_features as f64).sqrt();
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let active = Bernoulli::new(TRUE_DENSITY).expect("valid probability");
        let truth: Vec<f64> = (0..num_features)
            .map(|_| {
                let on = active.sample(&mut rng);
                let v = 4.0 * normal.sample(&mut rng);
                if on {
                    v
                } else {
                    0.0
                }
            })
            .collect();
        let mut features = Vec::with_capacity(num_samples);
        let mut labels = Vec::with_capacity(num_samples);
        for _ in 0..num_samples {
            let x: Vec<f64> = (0..num_features)
                .map(|_| scale * normal.sample(&mut rng))
                .collect();
            let p = sigmoid(dot(&truth, &x));
            let y = Bernoulli::new(p).expect("probability").sample(&mut rng);
            features.push(x);
            labels.push(if y { 1.0 } else { 0.0 });
        }
        Ok(SyntheticDataset {
            features,
            labels,
            seed,
        })
    }

    pub fn num_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn num_features(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    fn max_row_norm_sq(&self) -> f64 {
        self.features
            .iter()
            .map(|x| x.iter().map(|v| v * v).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regularizer {
    /// `strength * |w|_1`, applied by soft thresholding.
    L1,
    /// `strength / 2 * |w|^2`, applied through the gradient.
    L2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecomposableModel {
    pub weights: Vec<f64>,
    pub regularizer: Regularizer,
    pub strength: f64,
    pub step_size: f64,
}

impl DecomposableModel {
    /// Zero weights and a step of `0.1 / max_m |x_m|^2`.
    pub fn for_dataset(
        dataset: &SyntheticDataset,
        regularizer: Regularizer,
        strength: f64,
    ) -> Self {
        let norm = dataset.max_row_norm_sq();
        DecomposableModel {
            weights: vec![0.0; dataset.num_features()],
            regularizer,
            strength,
            step_size: if norm > 0.0 { 0.1 / norm } else { 0.0 },
        }
    }

    /// Training objective including the regularizer.
    pub fn loss(&self, dataset: &SyntheticDataset) -> f64 {
        let m = dataset.num_samples() as f64;
        let data: f64 = dataset
            .features
            .iter()
            .zip(&dataset.labels)
            .map(|(x, &y)| {
                let r = y - sigmoid(dot(&self.weights, x));
                r * r
            })
            .sum::<f64>()
            / m;
        let reg = match self.regularizer {
            Regularizer::L1 => self.strength * self.weights.iter().map(|w| w.abs()).sum::<f64>(),
            Regularizer::L2 => {
                0.5 * self.strength * self.weights.iter().map(|w| w * w).sum::<f64>()
            }
        };
        data + reg
    }

    /// `d/dz` of each sample's data term, scaled by `1/M`.
    fn sample_weights(
        &self,
        dataset: &SyntheticDataset,
        samples: std::ops::Range<usize>,
    ) -> Vec<f64> {
        let m = dataset.num_samples() as f64;
        samples
            .map(|i| {
                let s = sigmoid(dot(&self.weights, &dataset.features[i]));
                2.0 * (s - dataset.labels[i]) * s * (1.0 - s) / m
            })
            .collect()
    }

    /// Gradient of the data term on coordinates `block` over the given samples.
    fn block_gradient(
        &self,
        dataset: &SyntheticDataset,
        block: std::ops::Range<usize>,
        samples: std::ops::Range<usize>,
        coeff: &[f64],
    ) -> Vec<f64> {
        let mut g = vec![0.0; block.len()];
        for (c, i) in coeff.iter().zip(samples) {
            let x = &dataset.features[i][block.clone()];
            for (gj, xj) in g.iter_mut().zip(x) {
                *gj += c * xj;
            }
        }
        g
    }

    /// Fixed-step update of coordinates starting at `offset` from their data gradient.
    fn update_block(&self, next: &mut [f64], offset: usize, grad: &[f64]) {
        let eta = self.step_size;
        for (j, g) in grad.iter().enumerate() {
            let w = self.weights[offset + j];
            next[offset + j] = match self.regularizer {
                Regularizer::L2 => w - eta * (g + self.strength * w),
                Regularizer::L1 => soft_threshold(w - eta * g, eta * self.strength),
            };
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    v.signum() * (v.abs() - t).max(0.0)
}

/// Splits `total` into integer parts proportional to `weights` by largest remainder
/// (ties to the lower index).
fn proportional_split(weights: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if !(sum > 0.0) {
        let mut out = vec![0; weights.len()];
        if let Some(first) = out.first_mut() {
            *first = total;
        }
        return out;
    }
    let exact: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut parts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let assigned: usize = parts.iter().sum();
    for &k in order.iter().cycle().take(total.saturating_sub(assigned)) {
        parts[k] += 1;
    }
    parts
}

fn ranges(parts: &[usize]) -> Vec<std::ops::Range<usize>> {
    let mut start = 0;
    parts
        .iter()
        .map(|&p| {
            let r = start..start + p;
            start += p;
            r
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub latency: f64,
    pub cumulative_latency: f64,
    /// Training loss after the round.
    pub loss: f64,
    pub worker_energy: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTrace {
    pub scheme: Scheme,
    pub seed: u64,
    pub initial_loss: f64,
    pub rounds: Vec<RoundRecord>,
    pub final_weights: Vec<f64>,
}

impl RoundTrace {
    pub fn losses(&self) -> Vec<f64> {
        self.rounds.iter().map(|r| r.loss).collect()
    }

    /// Cumulative latency at which the loss first reaches `threshold`, if it does.
    pub fn latency_to_reach(&self, threshold: f64) -> Option<f64> {
        if self.initial_loss <= threshold {
            return Some(0.0);
        }
        self.rounds
            .iter()
            .find(|r| r.loss <= threshold)
            .map(|r| r.cumulative_latency)
    }

    /// Delimited rows `round,T,cumulative_T,loss,scheme,seed` with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("round,T,cumulative_T,loss,scheme,seed\n");
        for r in &self.rounds {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.round, r.latency, r.cumulative_latency, r.loss, self.scheme, self.seed
            ));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub rounds: usize,
    /// Redraw the channels (and re-plan) every round.
    pub redraw_channels: bool,
    /// Mean power gain used when redrawing.
    pub path_loss: f64,
    pub solver: SolverOptions,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            rounds: 50,
            redraw_channels: false,
            path_loss: 1e-3,
            solver: SolverOptions::default(),
        }
    }
}

/// Trains `model` for `opts.rounds` rounds with plans from `scheme`. The scenario's model
/// size must equal the number of weights.
pub fn run_partel(
    model: &DecomposableModel,
    dataset: &SyntheticDataset,
    scenario: &Scenario,
    scheme: Scheme,
    opts: &SimOptions,
) -> Result<RoundTrace> {
    let dim = model.weights.len();
    if dataset.num_features() != dim {
        return Err(Error::Dimension(format!(
            "dataset has {} features, model {dim}",
            dataset.num_features()
        )));
    }
    if scenario.config.model_size as usize != dim {
        return Err(Error::Dimension(format!(
            "scenario model size {} differs from model dimension {dim}",
            scenario.config.model_size
        )));
    }
    let mut model = model.clone();
    let initial_loss = model.loss(dataset);
    let mut rounds = Vec::with_capacity(opts.rounds);
    let mut cumulative = 0.0;
    let mut planned: Option<(SolveResult, Vec<f64>)> = None;
    for round in 0..opts.rounds {
        if planned.is_none() || opts.redraw_channels {
            let current = if opts.redraw_channels {
                let seed = scenario.seed.wrapping_add(round as u64 + 1);
                scenario.with_redrawn_channels(opts.path_loss, seed)?
            } else {
                scenario.clone()
            };
            planned = Some(plan_round(&current, scheme, &opts.solver, round)?);
        }
        let (result, energy) = planned.as_ref().expect("plan computed");
        model.weights = distributed_step(&model, dataset, scheme, &result.plan.worker_loads);
        cumulative += result.plan.latency;
        rounds.push(RoundRecord {
            round: round + 1,
            latency: result.plan.latency,
            cumulative_latency: cumulative,
            loss: model.loss(dataset),
            worker_energy: energy.clone(),
        });
    }
    Ok(RoundTrace {
        scheme,
        seed: scenario.seed,
        initial_loss,
        rounds,
        final_weights: model.weights,
    })
}

fn plan_round(
    scenario: &Scenario,
    scheme: Scheme,
    opts: &SolverOptions,
    round: usize,
) -> Result<(SolveResult, Vec<f64>)> {
    let result = run_scheme(scheme, scenario, opts)?;
    let report = validate_plan(&result.plan, scenario, None)?;
    if !report.feasible {
        return Err(Error::InfeasibleTarget(format!(
            "{scheme} plan violates its constraints by {:.3e} in round {round}",
            report.worst_violation
        )));
    }
    let energy = (0..scenario.num_workers())
        .map(|k| worker_energy(&result.plan, scenario, k).map(|e| e.total))
        .collect::<Result<Vec<f64>>>()?;
    Ok((result, energy))
}

/// One round of block updates assembled in worker order.
fn distributed_step(
    model: &DecomposableModel,
    dataset: &SyntheticDataset,
    scheme: Scheme,
    loads: &[f64],
) -> Vec<f64> {
    let dim = model.weights.len();
    let m = dataset.num_samples();
    let mut next = model.weights.clone();
    match scheme {
        Scheme::GreedyFeel => {
            let shards = ranges(&proportional_split(&vec![1.0; loads.len()], m));
            let mut grad = vec![0.0; dim];
            for shard in shards {
                let coeff = model.sample_weights(dataset, shard.clone());
                let g = model.block_gradient(dataset, 0..dim, shard, &coeff);
                for (a, b) in grad.iter_mut().zip(g) {
                    *a += b;
                }
            }
            model.update_block(&mut next, 0, &grad);
        }
        Scheme::Support | Scheme::Baseline => {
            let coeff = model.sample_weights(dataset, 0..m);
            for block in ranges(&proportional_split(loads, dim)) {
                let g = model.block_gradient(dataset, block.clone(), 0..m, &coeff);
                model.update_block(&mut next, block.start, &g);
            }
        }
    }
    next
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentralizedRun {
    pub losses: Vec<f64>,
    pub final_weights: Vec<f64>,
}

/// The same iteration on one machine: full gradient computed feature by feature.
pub fn centralized_reference(
    model: &DecomposableModel,
    dataset: &SyntheticDataset,
    rounds: usize,
) -> CentralizedRun {
    let mut model = model.clone();
    let dim = model.weights.len();
    let m = dataset.num_samples();
    let mut losses = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        let coeff = model.sample_weights(dataset, 0..m);
        let grad: Vec<f64> = (0..dim)
            .map(|j| {
                dataset
                    .features
                    .iter()
                    .zip(&coeff)
                    .map(|(x, c)| c * x[j])
                    .sum()
            })
            .collect();
        let mut next = model.weights.clone();
        model.update_block(&mut next, 0, &grad);
        model.weights = next;
        losses.push(model.loss(dataset));
    }
    CentralizedRun {
        losses,
        final_weights: model.weights,
    }
}
