//! Experiment configuration files.
//!
//! One TOML file describes a whole experiment: data, network, the Adam
//! baseline, the thermostat run, ensemble sampling and evaluation requests.
//! See `configs/` for the canonical experiments.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use simmering::data::{Builtin, Schema};
use simmering::dynamics::{IntegratorConfig, TemperatureSchedule};
use simmering::ensemble::SamplingPlan;
use simmering::net::{Activation, Initializer, LossKind, Topology};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    #[serde(default = "one")]
    pub replicates: u32,
    pub dataset: DatasetConfig,
    pub network: NetworkConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adam: Option<AdamConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simmer: Option<SimmerConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampling: Option<SamplingConfig>,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn one() -> u32 {
    1
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub n_train: usize,
    /// Min-max scale regression targets as well as features.
    #[serde(default = "yes")]
    pub scale_targets: bool,
    pub source: DataSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    NoisySine {
        n_points: usize,
        noise_amp: f64,
    },
    Builtin {
        name: Builtin,
        schema: Schema,
    },
    /// `path` is resolved against the config file's directory.
    Csv {
        path: PathBuf,
        schema: Schema,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub layer_sizes: Vec<usize>,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
    pub loss: LossKind,
    pub initializer: Initializer,
    #[serde(default)]
    pub loss_units: LossUnits,
}

/// Units of regression targets inside the training loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossUnits {
    /// Predictions inverse-scaled to the data's units before comparison.
    #[default]
    Original,
    /// Min-max scaled targets, as the network sees them.
    Scaled,
}

impl NetworkConfig {
    pub fn topology(&self) -> Result<Topology> {
        Topology::uniform(
            self.layer_sizes.clone(),
            self.hidden_activation,
            self.output_activation,
        )
        .map_err(|e| CliError::config("network.layer_sizes", e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub epochs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimmerConfig {
    pub dt: f64,
    #[serde(default = "chain_length")]
    pub chain_length: usize,
    #[serde(default = "unit")]
    pub chain_mass: f64,
    #[serde(default = "unit")]
    pub particle_mass: f64,
    pub iterations: u64,
    /// Trajectory log cadence; 0 writes no trajectory rows.
    #[serde(default = "one_u64")]
    pub log_every: u64,
    pub schedule: TemperatureSchedule,
}

fn chain_length() -> usize {
    2
}

fn unit() -> f64 {
    1.0
}

fn one_u64() -> u64 {
    1
}

impl SimmerConfig {
    pub fn integrator(&self) -> IntegratorConfig {
        IntegratorConfig {
            dt: self.dt,
            chain_length: self.chain_length,
            chain_mass: self.chain_mass,
            particle_mass: self.particle_mass,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    pub burn_in: u64,
    #[serde(default = "one_u64")]
    pub stride: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fraction: Option<f64>,
}

impl SamplingConfig {
    pub fn plan(&self, seed: u64) -> SamplingPlan {
        SamplingPlan {
            burn_in: self.burn_in,
            stride: self.stride,
            fraction: self.fraction,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridRequest>,
    /// Inputs (original feature units) at which to record every member's prediction.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub distribution_at: Vec<Vec<f64>>,
    /// Points on `[-1, 1]` for the squared error of the fit against the
    /// noiseless curve; noisy-sine data only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_points: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridRequest {
    pub resolution: usize,
    /// `[x_lo, x_hi, y_lo, y_hi]` in original feature units.
    pub bounds: [f64; 4],
}

impl GridRequest {
    pub fn bounds(&self) -> [(f64, f64); 2] {
        let b = self.bounds;
        [(b[0], b[1]), (b[2], b[3])]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Write ensemble parameter snapshots; needed by `evaluate`.
    #[serde(default = "yes")]
    pub snapshots: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { snapshots: true }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| CliError::config("<file>", e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Parses and validates `path`; CSV paths are made relative to the
    /// config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut config: ExperimentConfig =
            toml::from_str(&text).map_err(|e| CliError::config(&path.display().to_string(), e.to_string()))?;
        if let DataSource::Csv { path: csv, .. } = &mut config.dataset.source {
            if csv.is_relative() {
                if let Some(dir) = path.parent() {
                    *csv = dir.join(&*csv);
                }
            }
            if !csv.exists() {
                return Err(CliError::config(
                    "dataset.source.path",
                    format!("{} does not exist", csv.display()),
                ));
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(CliError::config("replicates", "must be >= 1"));
        }
        match &self.dataset.source {
            DataSource::NoisySine { n_points, noise_amp } => {
                if *n_points < 2 {
                    return Err(CliError::config("dataset.source.n_points", "must be >= 2"));
                }
                if !(noise_amp.is_finite() && *noise_amp >= 0.0) {
                    return Err(CliError::config("dataset.source.noise_amp", "must be finite and >= 0"));
                }
                if self.dataset.n_train >= *n_points {
                    return Err(CliError::config("dataset.n_train", "must be below n_points"));
                }
            }
            DataSource::Builtin { schema, .. } | DataSource::Csv { schema, .. } => {
                if schema.features.is_empty() || schema.targets.is_empty() {
                    return Err(CliError::config(
                        "dataset.source.schema",
                        "needs at least one feature and one target",
                    ));
                }
            }
        }
        if self.dataset.n_train == 0 {
            return Err(CliError::config("dataset.n_train", "must be >= 1"));
        }
        let topology = self.network.topology()?;
        let expected_inputs = match &self.dataset.source {
            DataSource::NoisySine { .. } => 1,
            DataSource::Builtin { schema, .. } | DataSource::Csv { schema, .. } => schema.features.len(),
        };
        if topology.input_dim() != expected_inputs {
            return Err(CliError::config(
                "network.layer_sizes",
                format!(
                    "input width {} does not match {expected_inputs} features",
                    topology.input_dim()
                ),
            ));
        }
        if let Some(adam) = &self.adam {
            if !(adam.learning_rate > 0.0 && adam.learning_rate.is_finite()) {
                return Err(CliError::config("adam.learning_rate", "must be > 0"));
            }
            if adam.epochs < 2 {
                return Err(CliError::config("adam.epochs", "must be >= 2"));
            }
        }
        if let Some(simmer) = &self.simmer {
            simmer
                .integrator()
                .validate()
                .map_err(|e| CliError::config("simmer", e.to_string()))?;
            if simmer.iterations == 0 {
                return Err(CliError::config("simmer.iterations", "must be >= 1"));
            }
            simmer
                .schedule
                .validate()
                .map_err(|e| CliError::config("simmer.schedule", e.to_string()))?;
            let sampling = self
                .sampling
                .ok_or_else(|| CliError::config("sampling", "required with [simmer]"))?;
            sampling
                .plan(self.seed)
                .validate(simmer.iterations)
                .map_err(|e| CliError::config("sampling", e.to_string()))?;
        }
        if let Some(grid) = &self.evaluation.grid {
            if grid.resolution == 0 {
                return Err(CliError::config("evaluation.grid.resolution", "must be >= 1"));
            }
            if topology.input_dim() != 2 {
                return Err(CliError::config("evaluation.grid", "needs a 2-feature network"));
            }
        }
        for (i, x) in self.evaluation.distribution_at.iter().enumerate() {
            if x.len() != topology.input_dim() {
                return Err(CliError::config(
                    &format!("evaluation.distribution_at[{i}]"),
                    format!("expected {} values", topology.input_dim()),
                ));
            }
        }
        Ok(())
    }

    pub fn require_adam(&self) -> Result<AdamConfig> {
        self.adam.ok_or_else(|| CliError::config("adam", "section required"))
    }

    pub fn require_simmer(&self) -> Result<(SimmerConfig, SamplingConfig)> {
        let simmer = self.simmer.ok_or_else(|| CliError::config("simmer", "section required"))?;
        let sampling = self.sampling.ok_or_else(|| CliError::config("sampling", "section required"))?;
        Ok((simmer, sampling))
    }
}
