//! Experiment configuration (TOML). Unknown keys are rejected.

use std::path::Path;

use oeduu::grid::{Field, Grid};
use oeduu::prior::PriorModel;
use oeduu::reduction::{InnerMode, ReductionParams, Truncation};
use oeduu::sparsify::{AlphaSearch, ContinuationOptions, LbfgsOptions, PenaltyConfig};
use oeduu::transport::{SensorNetwork, TransportConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { nx: 49, ny: 33, lx: 1.5, ly: 1.0 }
    }
}

/// Bilaplacian-type Gaussian prior `N(mean, (delta I - rho Lap)^-2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldPriorConfig {
    pub rho: f64,
    pub delta: f64,
    pub mean: f64,
}

impl Default for FieldPriorConfig {
    fn default() -> Self {
        Self { rho: 0.008, delta: 0.02, mean: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DarcyConfig {
    /// Prior on the log-conductivity.
    pub rho: f64,
    pub delta: f64,
    pub mean: f64,
    /// Initial time is uniform on `[t0_min, t0_max]`.
    pub t0_min: f64,
    pub t0_max: f64,
}

impl Default for DarcyConfig {
    fn default() -> Self {
        Self { rho: 0.0025, delta: 0.0625, mean: -2.7, t0_min: -1.0, t0_max: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorConfig {
    pub nx: usize,
    pub ny: usize,
    pub margin: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self { nx: 10, ny: 6, margin: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub sigma: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { sigma: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReductionConfig {
    pub mu: f64,
    pub clusters: usize,
    pub r_sketch: usize,
    pub mode: InnerMode,
    pub truncation: Truncation,
    pub common_k: bool,
    /// Relative tolerance when compressing the factored Gramians.
    pub gramian_tol: f64,
    /// Extra tolerances and cluster counts whose basis sizes are reported.
    pub report_mu: Vec<f64>,
    pub report_clusters: Vec<usize>,
}

impl Default for ReductionConfig {
    fn default() -> Self {
        Self {
            mu: 2e-3,
            clusters: 1,
            r_sketch: 40,
            mode: InnerMode::TwoPass,
            truncation: Truncation::Standard,
            common_k: true,
            gramian_tol: 1e-8,
            report_mu: vec![2e-3, 1e-4],
            report_clusters: vec![1, 4],
        }
    }
}

impl ReductionConfig {
    pub fn params(&self) -> ReductionParams {
        ReductionParams {
            mu: self.mu,
            clusters: self.clusters,
            r_sketch: self.r_sketch,
            mode: self.mode,
            truncation: self.truncation,
            common_k: self.common_k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PenaltySettings {
    pub alpha: f64,
    pub eps_ratio: f64,
    pub binary_tol: f64,
    pub max_stages: usize,
    /// Continuation runs per design while adapting `alpha`; 1 keeps `alpha`.
    pub alpha_tries: usize,
    /// Accepted ratio between the `l1` solution's norm and the sensor count.
    pub alpha_ratio_tol: f64,
}

impl Default for PenaltySettings {
    fn default() -> Self {
        let p = PenaltyConfig::default();
        let a = AlphaSearch::default();
        Self {
            alpha: p.alpha,
            eps_ratio: p.eps_ratio,
            binary_tol: p.binary_tol,
            max_stages: 30,
            alpha_tries: a.max_tries,
            alpha_ratio_tol: a.ratio_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub memory: usize,
    pub pg_tol: f64,
    pub max_iter: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let o = LbfgsOptions::default();
        Self { memory: o.memory, pg_tol: o.pg_tol, max_iter: o.max_iter }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSettings {
    pub n_saa: usize,
    /// SAA samples used one at a time for deterministic designs.
    pub deterministic_samples: usize,
    pub gamma_grid: Vec<f64>,
    /// Observation times kept in the reduced-observation variant; must be a
    /// subset of `transport.obs_times`. Empty disables the variant.
    pub reduced_obs_times: Vec<f64>,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        Self {
            n_saa: 20,
            deterministic_samples: 20,
            gamma_grid: vec![0.2, 0.45, 1.0, 2.2, 4.7, 10.0],
            reduced_obs_times: vec![13.0, 15.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    pub n_eval: usize,
    pub mu: f64,
    pub clusters: usize,
    pub r_sketch: usize,
    /// Held-out percentiles reported next to the mean.
    pub percentiles: Vec<f64>,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self { n_eval: 50, mu: 1e-4, clusters: 4, r_sketch: 40, percentiles: vec![2.0, 25.0, 75.0, 98.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidateConfig {
    /// SAA samples re-evaluated with the full operators.
    pub samples: usize,
}

impl Default for ValidateConfig {
    fn default() -> Self {
        Self { samples: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Worker threads; 0 lets rayon decide.
    pub workers: usize,
    pub grid: GridConfig,
    pub prior: FieldPriorConfig,
    pub darcy: DarcyConfig,
    pub transport: TransportConfig,
    pub sensors: SensorConfig,
    pub noise: NoiseConfig,
    pub reduction: ReductionConfig,
    pub penalty: PenaltySettings,
    pub optimizer: OptimizerConfig,
    pub experiment: ExperimentSettings,
    pub evaluation: EvaluationConfig,
    pub validate: ValidateConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 20_240_601,
            workers: 0,
            grid: GridConfig::default(),
            prior: FieldPriorConfig::default(),
            darcy: DarcyConfig::default(),
            transport: TransportConfig::default(),
            sensors: SensorConfig::default(),
            noise: NoiseConfig::default(),
            reduction: ReductionConfig::default(),
            penalty: PenaltySettings::default(),
            optimizer: OptimizerConfig::default(),
            experiment: ExperimentSettings::default(),
            evaluation: EvaluationConfig::default(),
            validate: ValidateConfig::default(),
        }
    }
}

fn field_err(path: &str, msg: impl Into<String>) -> CliError {
    CliError::Config(format!("{path}: {}", msg.into()))
}

fn positive(path: &str, v: f64) -> Result<(), CliError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(field_err(path, format!("must be positive, got {v}")))
    }
}

fn unit_open(path: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(field_err(path, format!("must lie in (0, 1), got {v}")))
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.grid.nx < 3 || self.grid.ny < 3 {
            return Err(field_err("grid", "needs at least 3 x 3 nodes"));
        }
        positive("grid.lx", self.grid.lx)?;
        positive("grid.ly", self.grid.ly)?;
        positive("prior.rho", self.prior.rho)?;
        positive("prior.delta", self.prior.delta)?;
        positive("darcy.rho", self.darcy.rho)?;
        positive("darcy.delta", self.darcy.delta)?;
        if !(self.darcy.t0_min.is_finite() && self.darcy.t0_max.is_finite() && self.darcy.t0_min <= self.darcy.t0_max) {
            return Err(field_err("darcy.t0_min", "must not exceed darcy.t0_max"));
        }
        self.transport
            .validate(self.darcy.t0_max)
            .map_err(|e| field_err("transport", e.to_string()))?;
        if self.sensors.nx == 0 || self.sensors.ny == 0 {
            return Err(field_err("sensors", "lattice needs at least one sensor per direction"));
        }
        positive("noise.sigma", self.noise.sigma)?;
        let red = &self.reduction;
        unit_open("reduction.mu", red.mu)?;
        for (i, &m) in red.report_mu.iter().enumerate() {
            unit_open(&format!("reduction.report_mu[{i}]"), m)?;
        }
        if red.clusters == 0 || red.report_clusters.contains(&0) {
            return Err(field_err("reduction.clusters", "must be at least 1"));
        }
        if red.r_sketch == 0 {
            return Err(field_err("reduction.r_sketch", "must be at least 1"));
        }
        unit_open("reduction.gramian_tol", red.gramian_tol)?;
        let ex = &self.experiment;
        if ex.n_saa == 0 {
            return Err(field_err("experiment.n_saa", "must be at least 1"));
        }
        if red.clusters > ex.n_saa || red.report_clusters.iter().any(|&l| l > ex.n_saa) {
            return Err(field_err("reduction.clusters", "cannot exceed experiment.n_saa"));
        }
        if ex.deterministic_samples > ex.n_saa {
            return Err(field_err("experiment.deterministic_samples", "cannot exceed experiment.n_saa"));
        }
        if ex.gamma_grid.is_empty() {
            return Err(field_err("experiment.gamma_grid", "must not be empty"));
        }
        for (i, &g) in ex.gamma_grid.iter().enumerate() {
            if !(g.is_finite() && g >= 0.0) {
                return Err(field_err(&format!("experiment.gamma_grid[{i}]"), format!("must be nonnegative, got {g}")));
            }
        }
        for (i, t) in ex.reduced_obs_times.iter().enumerate() {
            if !self.transport.obs_times.contains(t) {
                return Err(field_err(&format!("experiment.reduced_obs_times[{i}]"), format!("{t} is not one of transport.obs_times")));
            }
        }
        self.penalty_config(0.0).validate().map_err(|e| field_err("penalty", e.to_string()))?;
        if self.penalty.alpha_tries == 0 {
            return Err(field_err("penalty.alpha_tries", "must be at least 1"));
        }
        if !(self.penalty.alpha_ratio_tol >= 1.0) {
            return Err(field_err("penalty.alpha_ratio_tol", format!("must be at least 1, got {}", self.penalty.alpha_ratio_tol)));
        }
        if self.optimizer.memory == 0 || self.optimizer.max_iter == 0 {
            return Err(field_err("optimizer", "memory and max_iter must be at least 1"));
        }
        positive("optimizer.pg_tol", self.optimizer.pg_tol)?;
        let ev = &self.evaluation;
        if ev.n_eval == 0 {
            return Err(field_err("evaluation.n_eval", "must be at least 1"));
        }
        unit_open("evaluation.mu", ev.mu)?;
        if ev.clusters == 0 || ev.clusters > ev.n_eval {
            return Err(field_err("evaluation.clusters", "must lie in [1, evaluation.n_eval]"));
        }
        if ev.r_sketch == 0 {
            return Err(field_err("evaluation.r_sketch", "must be at least 1"));
        }
        for (i, &p) in ev.percentiles.iter().enumerate() {
            if !(0.0..=100.0).contains(&p) {
                return Err(field_err(&format!("evaluation.percentiles[{i}]"), format!("must lie in [0, 100], got {p}")));
            }
        }
        if self.validate.samples > ex.n_saa {
            return Err(field_err("validate.samples", "cannot exceed experiment.n_saa"));
        }
        Ok(())
    }

    pub fn grid(&self) -> Grid {
        Grid::new(self.grid.nx, self.grid.ny, self.grid.lx, self.grid.ly).expect("validated grid")
    }

    pub fn parameter_prior(&self) -> oeduu::Result<PriorModel> {
        let g = self.grid();
        PriorModel::new(g, self.prior.rho, self.prior.delta, Field::constant(g.n(), self.prior.mean))
    }

    pub fn theta_prior(&self) -> oeduu::Result<PriorModel> {
        let g = self.grid();
        PriorModel::new(g, self.darcy.rho, self.darcy.delta, Field::constant(g.n(), self.darcy.mean))
    }

    pub fn sensor_network(&self) -> oeduu::Result<SensorNetwork> {
        SensorNetwork::lattice(&self.grid(), self.sensors.nx, self.sensors.ny, self.sensors.margin)
    }

    pub fn n_sensors(&self) -> usize {
        self.sensors.nx * self.sensors.ny
    }

    pub fn penalty_config(&self, gamma: f64) -> PenaltyConfig {
        PenaltyConfig {
            gamma,
            alpha: self.penalty.alpha,
            eps_ratio: self.penalty.eps_ratio,
            binary_tol: self.penalty.binary_tol,
            max_stages: self.penalty.max_stages,
        }
    }

    pub fn continuation_options(&self, gamma: f64) -> ContinuationOptions {
        ContinuationOptions {
            penalty: self.penalty_config(gamma),
            inner: LbfgsOptions {
                memory: self.optimizer.memory,
                pg_tol: self.optimizer.pg_tol,
                max_iter: self.optimizer.max_iter,
                ..LbfgsOptions::default()
            },
            cold_start: false,
            w0: None,
        }
    }

    pub fn alpha_search(&self) -> AlphaSearch {
        AlphaSearch { max_tries: self.penalty.alpha_tries, ratio_tol: self.penalty.alpha_ratio_tol, ..AlphaSearch::default() }
    }

    /// Observation-time indices kept by the reduced-observation variant.
    pub fn reduced_time_indices(&self) -> Vec<usize> {
        self.experiment
            .reduced_obs_times
            .iter()
            .filter_map(|t| self.transport.obs_times.iter().position(|o| o == t))
            .collect()
    }

    /// Small problem for smoke runs: 9 x 7 grid, 12 sensors, 5 samples.
    pub fn smoke() -> Self {
        let mut c = Self::default();
        c.grid = GridConfig { nx: 9, ny: 7, ..GridConfig::default() };
        c.sensors = SensorConfig { nx: 4, ny: 3, margin: 0.1 };
        c.transport.n_steps = 40;
        c.reduction.r_sketch = 20;
        c.reduction.report_clusters = vec![1, 2];
        c.experiment.n_saa = 5;
        c.experiment.deterministic_samples = 5;
        c.evaluation.n_eval = 8;
        c.evaluation.clusters = 2;
        c.evaluation.r_sketch = 20;
        c.validate.samples = 1;
        c
    }
}
