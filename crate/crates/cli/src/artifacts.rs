//! Files inside a run directory.
//!
//! Parameter vectors are stored as raw little-endian IEEE-754 binary64
//! values (`<name>.bin`), snapshot after snapshot, each in the library's
//! flat layout. A JSON sidecar (`<name>.json`) records the topology, the
//! per-layer offsets, the snapshot count and, for ensembles, the iteration
//! and temperature of every snapshot plus the scalers needed to feed raw
//! features to the networks.

use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use simmering::data::ScalerParams;
use simmering::ensemble::{EnsembleBundle, Snapshot};
use simmering::net::{Activation, ParamVector, Topology};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};

pub const CODE_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));
pub const MANIFEST: &str = "manifest.json";
pub const CONFIG: &str = "config.toml";
pub const METRICS: &str = "metrics.json";
pub const TRAJECTORY: &str = "trajectory.csv";
pub const ENSEMBLE: &str = "ensemble";

pub fn replicate_dir(root: &Path, replicate: u32) -> PathBuf {
    root.join(format!("replicate_{replicate:03}"))
}

/// Creates `path` for a new run. An existing directory is accepted only if
/// it holds no previous run.
pub fn create_run_dir(path: &Path) -> Result<()> {
    if path.join(MANIFEST).exists() {
        return Err(CliError::run_dir(path, "already contains a run"));
    }
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&read_text(path)?)?)
}

pub fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::Writer::from_writer(BufWriter::new(file)))
}

/// Hex SHA-256 of the resolved config text.
pub fn config_hash(config: &ExperimentConfig) -> String {
    Sha256::digest(config.to_toml().as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub code_version: String,
    pub config_hash: String,
    pub seed: u64,
    /// Replicate indices; replicate `r` draws its initialization, velocities
    /// and subsample from stream `r` of `seed`.
    pub replicates: Vec<u32>,
    /// Data noise and the train/test split come from stream 0 of this seed.
    pub data_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from_run: Option<String>,
}

/// Writes the manifest and resolved config that make a run reproducible.
pub fn write_run_header(dir: &Path, command: &str, config: &ExperimentConfig, from_run: Option<&Path>) -> Result<()> {
    write_text(&dir.join(CONFIG), &config.to_toml())?;
    write_json(
        &dir.join(MANIFEST),
        &Manifest {
            command: command.to_owned(),
            code_version: CODE_VERSION.to_owned(),
            config_hash: config_hash(config),
            seed: config.seed,
            replicates: (0..config.replicates).collect(),
            data_seed: config.seed,
            from_run: from_run.map(|p| p.display().to_string()),
        },
    )
}

pub fn read_run_config(dir: &Path) -> Result<ExperimentConfig> {
    let path = dir.join(CONFIG);
    if !path.exists() {
        return Err(CliError::run_dir(dir, "missing config.toml"));
    }
    ExperimentConfig::from_toml_str(&read_text(&path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerLayout {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSidecar {
    pub dtype: String,
    pub byte_order: String,
    pub layout: String,
    pub param_count: usize,
    pub count: usize,
    pub topology: Topology,
    pub layers: Vec<LayerLayout>,
    pub iterations: Vec<u64>,
    pub temperatures: Vec<f64>,
    pub feature_scaler: Option<ScalerParams>,
    pub target_scaler: Option<ScalerParams>,
}

const LAYOUT: &str = "snapshot-major; within a snapshot, layers in order, each as fan_out x fan_in weights (row-major) followed by fan_out biases";

fn sidecar(bundle: &EnsembleBundle) -> ParamSidecar {
    ParamSidecar {
        dtype: "f64".into(),
        byte_order: "little-endian".into(),
        layout: LAYOUT.into(),
        param_count: bundle.topology.param_count(),
        count: bundle.len(),
        topology: bundle.topology.clone(),
        layers: bundle
            .topology
            .layers()
            .iter()
            .map(|l| LayerLayout {
                fan_in: l.fan_in,
                fan_out: l.fan_out,
                weight_offset: l.weight_offset,
                bias_offset: l.bias_offset,
                activation: l.activation,
            })
            .collect(),
        iterations: bundle.snapshots.iter().map(|s| s.iteration).collect(),
        temperatures: bundle.snapshots.iter().map(|s| s.temperature).collect(),
        feature_scaler: bundle.feature_scaler.clone(),
        target_scaler: bundle.target_scaler.clone(),
    }
}

/// Writes `<stem>.bin` and `<stem>.json`.
pub fn write_bundle(dir: &Path, stem: &str, bundle: &EnsembleBundle) -> Result<()> {
    let bin = dir.join(format!("{stem}.bin"));
    let file = File::create(&bin).map_err(|e| CliError::io(&bin, e))?;
    let mut out = BufWriter::new(file);
    for s in &bundle.snapshots {
        for v in s.params.iter() {
            out.write_all(&v.to_le_bytes()).map_err(|e| CliError::io(&bin, e))?;
        }
    }
    out.flush().map_err(|e| CliError::io(&bin, e))?;
    write_json(&dir.join(format!("{stem}.json")), &sidecar(bundle))
}

pub fn read_bundle(dir: &Path, stem: &str) -> Result<EnsembleBundle> {
    let meta_path = dir.join(format!("{stem}.json"));
    let bin = dir.join(format!("{stem}.bin"));
    if !meta_path.exists() || !bin.exists() {
        return Err(CliError::run_dir(dir, format!("missing {stem}.bin / {stem}.json")));
    }
    let meta: ParamSidecar = read_json(&meta_path)?;
    let mut bytes = Vec::new();
    File::open(&bin)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| CliError::io(&bin, e))?;
    let n = meta.param_count;
    if n != meta.topology.param_count()
        || bytes.len() != meta.count * n * 8
        || meta.iterations.len() != meta.count
        || meta.temperatures.len() != meta.count
    {
        return Err(CliError::run_dir(dir, format!("{stem}.bin does not match its sidecar")));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let snapshots = values
        .chunks(n.max(1))
        .zip(meta.iterations.iter().zip(&meta.temperatures))
        .map(|(p, (&iteration, &temperature))| Snapshot {
            iteration,
            temperature,
            params: ParamVector::from(p.to_vec()),
        })
        .collect();
    Ok(EnsembleBundle::new(
        meta.topology,
        snapshots,
        meta.feature_scaler,
        meta.target_scaler,
    )?)
}

/// A single parameter vector in the same format as an ensemble of one.
pub fn write_params(
    dir: &Path,
    stem: &str,
    topology: &Topology,
    params: &ParamVector,
    iteration: u64,
) -> Result<()> {
    let bundle = EnsembleBundle::new(
        topology.clone(),
        vec![Snapshot {
            iteration,
            temperature: 0.0,
            params: params.clone(),
        }],
        None,
        None,
    )?;
    write_bundle(dir, stem, &bundle)
}

pub fn read_params(dir: &Path, stem: &str) -> Result<(Topology, ParamVector)> {
    let mut bundle = read_bundle(dir, stem)?;
    if bundle.len() != 1 {
        return Err(CliError::run_dir(dir, format!("{stem} should hold one vector")));
    }
    let s = bundle.snapshots.pop().expect("one snapshot");
    Ok((bundle.topology, s.params))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundle_round_trip_is_bit_exact() {
        let t = Topology::uniform(vec![2, 3, 1], Activation::Tanh, Activation::Linear).unwrap();
        let snaps: Vec<Snapshot> = (0..4)
            .map(|i| Snapshot {
                iteration: 10 + i,
                temperature: 0.1 * i as f64,
                params: (0..t.param_count())
                    .map(|j| (j as f64 + 0.1) / (i as f64 + 3.0))
                    .collect::<Vec<_>>()
                    .into(),
            })
            .collect();
        let scaler = ScalerParams {
            min: vec![0.0, 1.0],
            max: vec![1.0, 3.0],
        };
        let b = EnsembleBundle::new(t, snaps, Some(scaler), None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_bundle(dir.path(), "e", &b).unwrap();
        assert_eq!(read_bundle(dir.path(), "e").unwrap(), b);
        let bytes = fs::read(dir.path().join("e.bin")).unwrap();
        assert_eq!(bytes.len(), 4 * 13 * 8);
        let first = f64::from_le_bytes(bytes[..8].try_into().unwrap());
        assert_eq!(first, 0.1 / 3.0);
    }

    #[test]
    fn truncated_binary_is_rejected() {
        let t = Topology::uniform(vec![1, 1], Activation::Linear, Activation::Linear).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_params(dir.path(), "p", &t, &vec![1.0, 2.0].into(), 5).unwrap();
        let (t2, p) = read_params(dir.path(), "p").unwrap();
        assert_eq!((t2, p.into_vec()), (t.clone(), vec![1.0, 2.0]));
        fs::write(dir.path().join("p.bin"), [0u8; 12]).unwrap();
        assert!(read_params(dir.path(), "p").is_err());
    }

    #[test]
    fn run_dir_refuses_reuse() {
        let dir = tempfile::tempdir().unwrap();
        create_run_dir(dir.path()).unwrap();
        write_text(&dir.path().join(MANIFEST), "{}").unwrap();
        assert!(create_run_dir(dir.path()).is_err());
    }
}
