//! Run configuration: one TOML file drives every pipeline stage.
//!
//! The file is schema-validated on load (unknown keys are rejected). All
//! randomness flows from `master_seed`; per-stage seeds are derived from it
//! by name, so stages can be reproduced independently.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tephra_core::kl::GibbsSpec;
use tephra_core::metric::{DeepMetricConfig, SdmlConfig, SummaryConfig};
use tephra_core::model::{
    AdapterConfig, ExternalSimulator, Locations, PriorBox, SimulatorConfig, Surrogate,
};
use tephra_core::nn::SgdConfig;
use tephra_core::scheduler::{ItemSimulator, TeamDescriptor, Transport};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub master_seed: u64,
    pub prior: PriorSection,
    pub simulator: SimulatorSection,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub metric: MetricSection,
    #[serde(default)]
    pub evaluate: EvaluateSection,
    #[serde(default)]
    pub abc: AbcSection,
    #[serde(default)]
    pub ppc: PpcSection,
    #[serde(default)]
    pub scheduler: SchedulerSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSection {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulatorSection {
    /// `surrogate` or `external`.
    #[serde(default = "default_kind")]
    pub kind: String,
    /// Site geometry CSV (`id,x_m,y_m`).
    pub locations: PathBuf,
    #[serde(default = "default_t0")]
    pub t0: f64,
    #[serde(default = "default_n0")]
    pub n0: f64,
    #[serde(default = "default_d_a")]
    pub d_a: f64,
    #[serde(default = "default_d_p")]
    pub d_p: f64,
    #[serde(default = "default_noise")]
    pub noise_scale: f64,
    /// External simulator launch line (`kind = "external"` only).
    #[serde(default)]
    pub command: Option<String>,
    #[serde(default)]
    pub args: Vec<String>,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
}

fn default_kind() -> String {
    "surrogate".into()
}
fn default_t0() -> f64 {
    1256.0
}
fn default_n0() -> f64 {
    0.01
}
fn default_d_a() -> f64 {
    300.0
}
fn default_d_p() -> f64 {
    1500.0
}
fn default_noise() -> f64 {
    0.1
}
fn default_timeout() -> u64 {
    60_000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub n: usize,
    pub train_fraction: f64,
}

impl Default for TrainingSection {
    fn default() -> Self {
        TrainingSection {
            n: 400,
            train_fraction: 0.75,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricSection {
    /// Technique trained by `train` when `--technique` is not given.
    pub technique: String,
    pub quantile: f64,
    /// Hidden widths of the embedding networks.
    pub hidden: Vec<usize>,
    /// Hidden widths of the summary-statistics regressor.
    #[serde(default = "default_summary_hidden")]
    pub summary_hidden: Vec<usize>,
    pub embedding_dim: usize,
    pub margin: f64,
    pub p_similar: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Optional overrides; per-technique defaults otherwise
    /// (contrastive 400/32, triplet 800/16, summary_stats 400/2).
    #[serde(default)]
    pub epochs: Option<usize>,
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub sdml: SdmlSection,
}

fn default_summary_hidden() -> Vec<usize> {
    vec![80, 40, 15]
}

impl Default for MetricSection {
    fn default() -> Self {
        MetricSection {
            technique: "triplet".into(),
            quantile: 0.6,
            hidden: vec![100, 80, 40],
            summary_hidden: default_summary_hidden(),
            embedding_dim: 15,
            margin: 1.0,
            p_similar: 0.4,
            learning_rate: 1e-3,
            momentum: 0.9,
            epochs: None,
            batch_size: None,
            sdml: SdmlSection::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdmlSection {
    pub eta: f64,
    pub lambda: f64,
    pub max_iters: usize,
    pub tol: f64,
    /// Prior matrix: `sample_covariance` (default) or `identity`.
    #[serde(default = "default_sdml_prior")]
    pub prior: String,
}

fn default_sdml_prior() -> String {
    "sample_covariance".into()
}

impl Default for SdmlSection {
    fn default() -> Self {
        let d = SdmlConfig::default();
        SdmlSection {
            eta: d.eta,
            lambda: d.lambda,
            max_iters: d.max_iters,
            tol: d.tol,
            prior: default_sdml_prior(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateSection {
    pub beta: f64,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        EvaluateSection { beta: 1.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbcSection {
    pub n_sample: usize,
    pub n_step: usize,
    pub acc_cutoff: f64,
    pub keep_fraction: f64,
    /// Observation dataset (JSON `{"loads": [...]}`), required by `infer`.
    #[serde(default)]
    pub observation: Option<PathBuf>,
}

impl Default for AbcSection {
    fn default() -> Self {
        AbcSection {
            n_sample: 100,
            n_step: 12,
            acc_cutoff: 0.03,
            keep_fraction: 0.5,
            observation: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PpcSection {
    pub n_draws: usize,
}

impl Default for PpcSection {
    fn default() -> Self {
        PpcSection { n_draws: 100 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchedulerSection {
    pub teams: usize,
    pub workers_per_team: usize,
    /// `in-process` (worker threads) or `process` (child-process teams
    /// running `tephra team-worker`).
    pub transport: String,
}

impl Default for SchedulerSection {
    fn default() -> Self {
        SchedulerSection {
            teams: 1,
            workers_per_team: 1,
            transport: "in-process".into(),
        }
    }
}

/// A loaded configuration plus the bytes and path it came from (the bytes
/// feed the run id; the path lets child workers reload it).
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub path: PathBuf,
    pub raw_bytes: Vec<u8>,
}

impl LoadedConfig {
    pub fn load(path: &Path, seed_override: Option<u64>) -> Result<Self, CliError> {
        let raw_bytes = std::fs::read(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let text = std::str::from_utf8(&raw_bytes)
            .map_err(|e| CliError::Config(format!("config is not UTF-8: {e}")))?;
        let mut config: RunConfig = toml::from_str(text)
            .map_err(|e| CliError::Config(format!("config parse error: {e}")))?;
        if let Some(seed) = seed_override {
            config.master_seed = seed;
        }
        let loaded = LoadedConfig {
            config,
            path: path.to_path_buf(),
            raw_bytes,
        };
        loaded.validate()?;
        Ok(loaded)
    }

    fn validate(&self) -> Result<(), CliError> {
        let c = &self.config;
        self.prior()?;
        if !(c.training.train_fraction > 0.0 && c.training.train_fraction < 1.0) {
            return Err(CliError::Config(format!(
                "training.train_fraction must lie in (0, 1), got {}",
                c.training.train_fraction
            )));
        }
        if c.training.n < 4 {
            return Err(CliError::Config("training.n must be at least 4".into()));
        }
        if !(c.metric.quantile > 0.0 && c.metric.quantile < 1.0) {
            return Err(CliError::Config(format!(
                "metric.quantile must lie in (0, 1), got {}",
                c.metric.quantile
            )));
        }
        if !(c.evaluate.beta > 0.0) {
            return Err(CliError::Config("evaluate.beta must be positive".into()));
        }
        if c.scheduler.teams == 0 || c.scheduler.workers_per_team == 0 {
            return Err(CliError::Config(
                "scheduler.teams and workers_per_team must be >= 1".into(),
            ));
        }
        match c.metric.sdml.prior.as_str() {
            "sample_covariance" | "identity" => {}
            other => {
                return Err(CliError::Config(format!(
                    "metric.sdml.prior must be 'sample_covariance' or 'identity', got '{other}'"
                )))
            }
        }
        match c.scheduler.transport.as_str() {
            "in-process" | "process" => {}
            other => {
                return Err(CliError::Config(format!(
                    "scheduler.transport must be 'in-process' or 'process', got '{other}'"
                )))
            }
        }
        match c.simulator.kind.as_str() {
            "surrogate" => {}
            "external" => {
                if c.simulator.command.is_none() {
                    return Err(CliError::Config(
                        "simulator.command is required for kind = 'external'".into(),
                    ));
                }
            }
            other => {
                return Err(CliError::Config(format!(
                    "simulator.kind must be 'surrogate' or 'external', got '{other}'"
                )))
            }
        }
        if !c.simulator.locations.exists() {
            return Err(CliError::Config(format!(
                "locations file not found: {}",
                c.simulator.locations.display()
            )));
        }
        Ok(())
    }

    pub fn prior(&self) -> Result<PriorBox, CliError> {
        PriorBox::new(self.config.prior.lower.clone(), self.config.prior.upper.clone())
            .map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn locations(&self) -> Result<Locations, CliError> {
        Locations::from_csv_path(&self.config.simulator.locations)
            .map_err(|e| CliError::Config(format!("invalid locations file: {e}")))
    }

    /// The simulator behind the scheduler for this run.
    pub fn item_simulator(&self) -> Result<std::sync::Arc<dyn ItemSimulator>, CliError> {
        let s = &self.config.simulator;
        match s.kind.as_str() {
            "surrogate" => {
                let sim = Surrogate::new(
                    SimulatorConfig {
                        t0: s.t0,
                        n0: s.n0,
                        d_a: s.d_a,
                        d_p: s.d_p,
                        noise_scale: s.noise_scale,
                        seed: 0,
                    },
                    self.locations()?,
                )
                .map_err(|e| CliError::Config(e.to_string()))?;
                Ok(std::sync::Arc::new(sim))
            }
            "external" => {
                let adapter = ExternalSimulator::new(AdapterConfig {
                    command: s.command.clone().expect("validated"),
                    args: s.args.clone(),
                    timeout_ms: s.timeout_ms,
                    expected_len: self.locations()?.len(),
                })
                .map_err(|e| CliError::Config(e.to_string()))?;
                Ok(std::sync::Arc::new(adapter))
            }
            _ => unreachable!("validated"),
        }
    }

    /// Team descriptors for this run, honoring `--teams`/`--workers-per-team`
    /// overrides.
    pub fn team_descriptors(
        &self,
        teams_override: Option<usize>,
        workers_override: Option<usize>,
    ) -> Result<Vec<TeamDescriptor>, CliError> {
        let teams = teams_override.unwrap_or(self.config.scheduler.teams).max(1);
        let workers = workers_override
            .unwrap_or(self.config.scheduler.workers_per_team)
            .max(1);
        let descriptors = (0..teams)
            .map(|t| {
                let transport = match self.config.scheduler.transport.as_str() {
                    "in-process" => Transport::InProcess,
                    "process" => {
                        let exe = std::env::current_exe().map_err(|e| {
                            CliError::Runtime(format!("cannot locate own executable: {e}"))
                        })?;
                        Transport::ChildProcess {
                            command: exe.to_string_lossy().into_owned(),
                            args: vec![
                                "team-worker".into(),
                                "--config".into(),
                                self.path.to_string_lossy().into_owned(),
                                "--workers".into(),
                                workers.to_string(),
                            ],
                            reply_timeout_ms: Some(self.config.simulator.timeout_ms.max(60_000)),
                        }
                    }
                    _ => unreachable!("validated"),
                };
                Ok(TeamDescriptor {
                    team_id: t as u32,
                    worker_count: workers,
                    transport,
                })
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        Ok(descriptors)
    }

    /// SGD settings for a named technique, applying the per-technique
    /// epoch/batch defaults unless overridden.
    pub fn sgd_for(&self, technique: &str, seed: u64) -> SgdConfig {
        let m = &self.config.metric;
        let (epochs, batch) = match technique {
            "triplet" => (800, 16),
            "contrastive" => (400, 32),
            _ => (400, 2),
        };
        SgdConfig {
            learning_rate: m.learning_rate,
            momentum: m.momentum,
            epochs: m.epochs.unwrap_or(epochs),
            batch_size: m.batch_size.unwrap_or(batch),
            seed,
        }
    }

    pub fn deep_config(&self, technique: &str, seed: u64) -> DeepMetricConfig {
        let m = &self.config.metric;
        DeepMetricConfig {
            hidden: m.hidden.clone(),
            embedding_dim: m.embedding_dim,
            margin: m.margin,
            p_similar: m.p_similar,
            sgd: self.sgd_for(technique, seed),
        }
    }

    pub fn summary_config(&self, seed: u64) -> SummaryConfig {
        let m = &self.config.metric;
        SummaryConfig {
            hidden: m.summary_hidden.clone(),
            sgd: self.sgd_for("summary_stats", seed),
        }
    }

    /// `data_dim` sizes the identity prior when configured.
    pub fn sdml_config(&self, data_dim: usize) -> SdmlConfig {
        let s = &self.config.metric.sdml;
        let m0 = match s.prior.as_str() {
            "identity" => Some(nalgebra::DMatrix::identity(data_dim, data_dim)),
            _ => None,
        };
        SdmlConfig {
            m0,
            eta: s.eta,
            lambda: s.lambda,
            max_iters: s.max_iters,
            tol: s.tol,
        }
    }

    pub fn gibbs_spec(&self) -> GibbsSpec {
        GibbsSpec {
            beta: self.config.evaluate.beta,
        }
    }
}
