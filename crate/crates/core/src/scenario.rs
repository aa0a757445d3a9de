//! Problem instances: system constants, worker profiles and per-(worker, subcarrier)
//! channel gains.
//!
//! A [`Scenario`] is the complete input of every solver in this crate. Instances are
//! generated from a seed (see [`generate_scenario`]) and persisted as JSON with the
//! top-level keys `config`, `workers`, `channels` and `seed`. Floats are written in their
//! shortest round-trip decimal form, so `load(save(s)) == s` bit for bit.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// System-wide constants shared by all workers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    /// Number of OFDM subcarriers `N`.
    pub num_subcarriers: usize,
    /// Bandwidth of one subcarrier in Hz.
    pub subcarrier_bandwidth: f64,
    /// Noise power per subcarrier in W.
    pub noise_power: f64,
    /// Bits used to encode one gradient element.
    pub bits_per_parameter: f64,
    /// Circuit energy paid by every worker in every round, in J.
    pub circuit_energy: f64,
    /// Number of model parameters `L`.
    pub model_size: u64,
}

impl SystemConfig {
    /// Builds a config from a noise power *density*; the per-subcarrier noise power is
    /// `density * bandwidth`.
    pub fn with_noise_density(
        num_subcarriers: usize,
        subcarrier_bandwidth: f64,
        noise_density: f64,
        bits_per_parameter: f64,
        circuit_energy: f64,
        model_size: u64,
    ) -> Self {
        SystemConfig {
            num_subcarriers,
            subcarrier_bandwidth,
            noise_power: noise_density * subcarrier_bandwidth,
            bits_per_parameter,
            circuit_energy,
            model_size,
        }
    }

    /// Experimental defaults: 312.5 kHz subcarriers, 1e-9 W/Hz noise, 32-bit gradients,
    /// no circuit energy, a 1.24e6-parameter model.
    pub fn experiment(num_subcarriers: usize) -> Self {
        Self::with_noise_density(num_subcarriers, 312_500.0, 1e-9, 32.0, 0.0, 1_240_000)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_subcarriers < 1 {
            return Err(Error::validation("config.num_subcarriers", "must be >= 1"));
        }
        positive("config.subcarrier_bandwidth", self.subcarrier_bandwidth)?;
        positive("config.noise_power", self.noise_power)?;
        if !(self.bits_per_parameter >= 1.0 && self.bits_per_parameter.is_finite()) {
            return Err(Error::validation(
                "config.bits_per_parameter",
                "must be >= 1",
            ));
        }
        if !(self.circuit_energy >= 0.0 && self.circuit_energy.is_finite()) {
            return Err(Error::validation("config.circuit_energy", "must be >= 0"));
        }
        if self.model_size < 1 {
            return Err(Error::validation("config.model_size", "must be >= 1"));
        }
        Ok(())
    }
}

/// Computation and power profile of one worker.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkerProfile {
    /// Computation speed `f` in parameters per second.
    pub compute_speed: f64,
    /// Computation power factor `g`; computing draws `g * f^3` watts.
    pub power_factor: f64,
    /// Maximum permitted average power `P_max` in W.
    pub power_cap: f64,
}

impl WorkerProfile {
    /// Computation power `g f^3` in W.
    pub fn compute_power(&self) -> f64 {
        self.power_factor * self.compute_speed.powi(3)
    }

    fn validate(&self, k: usize) -> Result<()> {
        positive(&format!("workers[{k}].compute_speed"), self.compute_speed)?;
        if !(self.power_factor >= 0.0 && self.power_factor.is_finite()) {
            return Err(Error::validation(
                format!("workers[{k}].power_factor"),
                "must be >= 0",
            ));
        }
        positive(&format!("workers[{k}].power_cap"), self.power_cap)
    }
}

/// Uplink power gains, `gains[k][n]` for worker `k` on subcarrier `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ChannelMatrix {
    pub gains: Vec<Vec<f64>>,
}

impl ChannelMatrix {
    pub fn new(gains: Vec<Vec<f64>>) -> Self {
        ChannelMatrix { gains }
    }

    pub fn num_workers(&self) -> usize {
        self.gains.len()
    }

    pub fn gain(&self, k: usize, n: usize) -> f64 {
        self.gains[k][n]
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.gains[k]
    }
}

/// Everything a solver needs to know about one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub config: SystemConfig,
    pub workers: Vec<WorkerProfile>,
    pub channels: ChannelMatrix,
    pub seed: u64,
}

impl Scenario {
    pub fn new(
        config: SystemConfig,
        workers: Vec<WorkerProfile>,
        channels: ChannelMatrix,
        seed: u64,
    ) -> Result<Self> {
        let s = Scenario {
            config,
            workers,
            channels,
            seed,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn num_workers(&self) -> usize {
        self.workers.len()
    }

    pub fn num_subcarriers(&self) -> usize {
        self.config.num_subcarriers
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.workers.is_empty() {
            return Err(Error::validation("workers", "at least one worker required"));
        }
        for (k, w) in self.workers.iter().enumerate() {
            w.validate(k)?;
        }
        let n = self.config.num_subcarriers;
        if self.channels.num_workers() != self.workers.len() {
            return Err(Error::validation(
                "channels",
                format!(
                    "expected {} rows, found {}",
                    self.workers.len(),
                    self.channels.num_workers()
                ),
            ));
        }
        for (k, row) in self.channels.gains.iter().enumerate() {
            if row.len() != n {
                return Err(Error::validation(
                    format!("channels[{k}]"),
                    format!("expected {n} gains, found {}", row.len()),
                ));
            }
            for (j, &h) in row.iter().enumerate() {
                positive(&format!("channels[{k}][{j}]"), h)?;
            }
        }
        Ok(())
    }

    /// Lower bound on any feasible round latency from the circuit energy: `max_k xi / P_k`.
    pub fn latency_floor(&self) -> f64 {
        let xi = self.config.circuit_energy;
        self.workers
            .iter()
            .map(|w| xi / w.power_cap)
            .fold(0.0, f64::max)
    }

    /// Same workers and constants, fresh i.i.d. Rayleigh channels drawn from `seed`.
    pub fn with_redrawn_channels(&self, path_loss: f64, seed: u64) -> Result<Scenario> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let channels = draw_channels(
            &mut rng,
            self.workers.len(),
            self.config.num_subcarriers,
            path_loss,
        )?;
        Scenario::new(self.config.clone(), self.workers.clone(), channels, seed)
    }
}

/// How worker profiles and channels are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionSpec {
    /// Mean of the exponential power gain (average path loss).
    pub path_loss: f64,
    /// Support of the uniform draw for `f`.
    pub speed_levels: Vec<f64>,
    /// Support of the uniform draw for `g`.
    pub power_factor_levels: Vec<f64>,
    /// `P_max`, identical for every worker.
    pub power_cap: f64,
}

impl Default for DistributionSpec {
    fn default() -> Self {
        DistributionSpec {
            path_loss: 1e-3,
            speed_levels: (1..=10).map(|i| i as f64 * 0.1e6).collect(),
            power_factor_levels: (1..=10).map(|i| i as f64 * 0.1e-16).collect(),
            power_cap: 8.0,
        }
    }
}

impl DistributionSpec {
    fn validate(&self) -> Result<()> {
        positive("dist.path_loss", self.path_loss)?;
        positive("dist.power_cap", self.power_cap)?;
        if self.speed_levels.is_empty() || self.speed_levels.iter().any(|&f| !(f > 0.0)) {
            return Err(Error::validation(
                "dist.speed_levels",
                "must be non-empty and positive",
            ));
        }
        if self.power_factor_levels.is_empty()
            || self.power_factor_levels.iter().any(|&g| !(g >= 0.0))
        {
            return Err(Error::validation(
                "dist.power_factor_levels",
                "must be non-empty and non-negative",
            ));
        }
        Ok(())
    }
}

/// Draws a scenario with `num_workers` workers. Identical arguments give a bit-identical
/// scenario.
pub fn generate_scenario(
    num_workers: usize,
    config: &SystemConfig,
    dist: &DistributionSpec,
    seed: u64,
) -> Result<Scenario> {
    if num_workers < 1 {
        return Err(Error::validation("num_workers", "must be >= 1"));
    }
    config.validate()?;
    dist.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let workers = (0..num_workers)
        .map(|_| {
            let f = *dist.speed_levels.choose(&mut rng).expect("non-empty");
            let g = *dist
                .power_factor_levels
                .choose(&mut rng)
                .expect("non-empty");
            WorkerProfile {
                compute_speed: f,
                power_factor: g,
                power_cap: dist.power_cap,
            }
        })
        .collect();
    let channels = draw_channels(
        &mut rng,
        num_workers,
        config.num_subcarriers,
        dist.path_loss,
    )?;
    Scenario::new(config.clone(), workers, channels, seed)
}

fn draw_channels(
    rng: &mut ChaCha8Rng,
    num_workers: usize,
    num_subcarriers: usize,
    path_loss: f64,
) -> Result<ChannelMatrix> {
    positive("path_loss", path_loss)?;
    // Rayleigh amplitude => exponential power gain.
    let exp =
        Exp::new(1.0 / path_loss).map_err(|e| Error::validation("path_loss", e.to_string()))?;
    let gains = (0..num_workers)
        .map(|_| {
            (0..num_subcarriers)
                .map(|_| {
                    // Exp can return exactly 0 with vanishing probability; gains must be > 0.
                    let h: f64 = exp.sample(rng);
                    h.max(f64::MIN_POSITIVE)
                })
                .collect()
        })
        .collect();
    Ok(ChannelMatrix::new(gains))
}

pub fn save_scenario(scenario: &Scenario, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(scenario).expect("scenario is always serializable");
    fs::write(path, text + "\n").map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let scenario: Scenario = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    scenario.validate()?;
    Ok(scenario)
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::validation(
            field,
            format!("must be positive and finite, got {v}"),
        ))
    }
}
