//! Data, split, scaling and objectives resolved from a config.

use ndarray::Array2;
use simmering::data::{self, Dataset, Prepared, Split, TaskKind};
use simmering::ensemble::{EnsembleBundle, Snapshot};
use simmering::net::{LossKind, ParamVector, Topology};
use simmering::potential::NetworkObjective;

use crate::config::{DataSource, ExperimentConfig, LossUnits};
use crate::error::{CliError, Result};

pub struct Experiment {
    pub config: ExperimentConfig,
    pub topology: Topology,
    pub dataset: Dataset,
    pub split: Split,
    pub prepared: Prepared,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let topology = config.network.topology()?;
        let dataset = match &config.dataset.source {
            DataSource::NoisySine { n_points, noise_amp } => data::gen_noisy_sine(*n_points, *noise_amp, config.seed)?,
            DataSource::Builtin { name, schema } => name.load(schema)?,
            DataSource::Csv { path, schema } => data::load_csv(path, schema)?,
        };
        let loss = config.network.loss;
        match (dataset.task, loss.is_classification()) {
            (TaskKind::Regression, true) => {
                return Err(CliError::config("network.loss", "classification loss on a regression dataset"))
            }
            (TaskKind::Classification, false) => {
                return Err(CliError::config("network.loss", "regression loss on a classification dataset"))
            }
            _ => {}
        }
        if topology.output_dim() != dataset.targets.ncols() {
            return Err(CliError::config(
                "network.layer_sizes",
                format!(
                    "output width {} does not match {} target columns",
                    topology.output_dim(),
                    dataset.targets.ncols()
                ),
            ));
        }
        if config.dataset.n_train >= dataset.len() {
            return Err(CliError::config(
                "dataset.n_train",
                format!("must be below the {} available rows", dataset.len()),
            ));
        }
        let split = data::split(dataset.len(), config.dataset.n_train, config.seed)?;
        let prepared = data::prepare(&dataset, &split, config.dataset.scale_targets)?;
        Ok(Experiment {
            config,
            topology,
            dataset,
            split,
            prepared,
        })
    }

    pub fn loss(&self) -> LossKind {
        self.config.network.loss
    }

    pub fn is_classification(&self) -> bool {
        self.dataset.task == TaskKind::Classification
    }

    fn loss_scale(&self) -> f64 {
        match self.config.network.loss_units {
            LossUnits::Scaled => 1.0,
            LossUnits::Original => self.prepared.target_units_factor(),
        }
    }

    /// Training loss in the configured units.
    pub fn train_objective(&self) -> Result<NetworkObjective<'_>> {
        let p = &self.prepared;
        Ok(NetworkObjective::new(&self.topology, p.train_x.view(), p.train_y.view(), self.loss())?
            .with_scale(self.loss_scale()))
    }

    pub fn test_objective(&self) -> Result<NetworkObjective<'_>> {
        let p = &self.prepared;
        Ok(NetworkObjective::new(&self.topology, p.test_x.view(), p.test_y.view(), self.loss())?
            .with_scale(self.loss_scale()))
    }

    /// Original-unit features and targets of the training rows.
    pub fn train_raw(&self) -> (Array2<f64>, Array2<f64>) {
        self.dataset.select(&self.split.train)
    }

    pub fn test_raw(&self) -> (Array2<f64>, Array2<f64>) {
        self.dataset.select(&self.split.test)
    }

    /// Class index per row of `targets` (one-hot).
    pub fn labels(targets: &Array2<f64>) -> Vec<usize> {
        targets
            .outer_iter()
            .map(|r| r.iter().position(|&v| v == 1.0).expect("one-hot row"))
            .collect()
    }

    pub fn bundle(&self, snapshots: Vec<Snapshot>) -> Result<EnsembleBundle> {
        Ok(EnsembleBundle::new(
            self.topology.clone(),
            snapshots,
            Some(self.prepared.feature_scaler.clone()),
            self.prepared.target_scaler.clone(),
        )?)
    }

    pub fn single(&self, params: &ParamVector) -> Result<EnsembleBundle> {
        self.bundle(vec![Snapshot {
            iteration: 0,
            temperature: 0.0,
            params: params.clone(),
        }])
    }

    pub fn class_names(&self) -> Vec<String> {
        if self.dataset.classes.is_empty() {
            (0..self.topology.output_dim().max(2)).map(|c| c.to_string()).collect()
        } else {
            self.dataset.classes.clone()
        }
    }
}
