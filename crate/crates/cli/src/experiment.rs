//! Repeated seeded training runs and their on-disk outputs.
//!
//! Each run writes `run-<seed>/curve.csv`, `run-<seed>/model.bin` and
//! `run-<seed>/report.json` below the output directory; `summary.json`
//! aggregates all runs.

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use mponet_core::network::{build_fc2_with, build_lenet5_with, train_with, EpochRecord};
use mponet_core::{compression_ratio, evaluate, run_stats, DatasetSplit, Network, TruncationSpec};
use serde::{Deserialize, Serialize};

use crate::archive::{ArchiveInfo, ModelArchive};
use crate::config::{ExperimentConfig, ModelKind, ResolvedSettings};
use crate::error::{CliError, Result};
use crate::idx::{load_mnist_split, Split};

pub const DATA_DIR_ENV: &str = "MPONET_DATA_DIR";

/// Command-line value, then configuration file value, then `MPONET_DATA_DIR`.
pub fn resolve_data_dir(flag: Option<&Path>, config: Option<&Path>) -> Result<PathBuf> {
    let dir = flag
        .map(Path::to_path_buf)
        .or_else(|| config.map(Path::to_path_buf))
        .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
        .ok_or_else(|| CliError::Usage(format!("no data directory: pass --data-dir or set {DATA_DIR_ENV}")))?;
    if !dir.is_dir() {
        return Err(CliError::Usage(format!("data directory {} does not exist", dir.display())));
    }
    Ok(dir)
}

#[derive(Debug, Clone)]
pub struct Datasets {
    pub train: DatasetSplit,
    pub test: DatasetSplit,
}

fn prepare(split: DatasetSplit, limit: Option<usize>, chi: Option<usize>) -> Result<DatasetSplit> {
    let split = match limit {
        Some(n) => split.head(n),
        None => split,
    };
    match chi {
        Some(chi) => Ok(split.rank_truncated(TruncationSpec::new(chi, split.rows(), split.cols())?)?),
        None => Ok(split),
    }
}

pub fn load_datasets(dir: &Path, config: &ExperimentConfig) -> Result<Datasets> {
    let train = prepare(load_mnist_split(dir, Split::Train)?, config.train_limit, config.input_chi)?;
    let test = prepare(load_mnist_split(dir, Split::Test)?, config.test_limit, config.input_chi)?;
    Ok(Datasets { train, test })
}

/// The network for `config`, initialized from `seed`.
pub fn build_network(config: &ExperimentConfig, seed: u64) -> Result<Network> {
    let structures = config.mpo_structures()?;
    let net = match config.model {
        ModelKind::Fc2 => {
            let s = (!structures.is_empty()).then(|| [structures[0].clone(), structures[1].clone()]);
            build_fc2_with(s, seed)?
        }
        ModelKind::Lenet5 => {
            let s = (!structures.is_empty())
                .then(|| [structures[0].clone(), structures[1].clone(), structures[2].clone()]);
            build_lenet5_with(s, seed)?
        }
    };
    Ok(net)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCount {
    pub layer: String,
    pub n_ori: usize,
    pub n_mpo: Option<usize>,
    pub structure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterTable {
    pub layers: Vec<LayerCount>,
    pub total_ori: usize,
    pub total_mpo: Option<usize>,
    /// `Σ N_mpo / Σ N_ori` over the replaced layers; absent for dense models.
    pub rho: Option<f64>,
}

/// Per-layer parameter counts of the replaceable linear layers.
pub fn parameter_table(config: &ExperimentConfig) -> Result<ParameterTable> {
    let structures = config.mpo_structures()?;
    let names = config.model.linear_layer_names();
    let sizes = config.model.linear_layer_sizes();
    let layers: Vec<LayerCount> = names
        .iter()
        .zip(&sizes)
        .enumerate()
        .map(|(k, (name, (nx, ny)))| LayerCount {
            layer: name.to_string(),
            n_ori: structures.get(k).map_or(nx * ny, |s| s.dense_param_count()),
            n_mpo: structures.get(k).map(|s| s.param_count()),
            structure: structures.get(k).map(|s| s.to_string()),
        })
        .collect();
    let ori: Vec<usize> = layers.iter().map(|l| l.n_ori).collect();
    let (total_mpo, rho) = if structures.is_empty() {
        (None, None)
    } else {
        let mpo: Vec<usize> = structures.iter().map(|s| s.param_count()).collect();
        (Some(mpo.iter().sum()), Some(compression_ratio(&mpo, &ori)?))
    };
    Ok(ParameterTable { layers, total_ori: ori.iter().sum(), total_mpo, rho })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
}

impl From<&EpochRecord> for EpochRow {
    fn from(r: &EpochRecord) -> Self {
        EpochRow { epoch: r.epoch, train_loss: r.train_loss, train_acc: r.train_acc, test_acc: r.test_acc }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub config_hash: String,
    pub epochs: Vec<EpochRow>,
    pub final_test_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyStats {
    pub mean: f64,
    pub sigma: Option<f64>,
    pub runs: Vec<f64>,
    pub m: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub config_hash: String,
    pub settings: ResolvedSettings,
    pub seeds: Vec<u64>,
    pub test_accuracy: AccuracyStats,
    pub parameters: ParameterTable,
    pub parameter_count: usize,
}

pub fn write_curve(path: &Path, rows: &[EpochRow]) -> Result<()> {
    let mut text = String::from("epoch,train_loss,train_acc,test_acc\n");
    for r in rows {
        text.push_str(&format!("{},{},{},{}\n", r.epoch, r.train_loss, r.train_acc, r.test_acc));
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn run_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("run-{seed}"))
}

/// A finished run whose archive re-evaluates to the recorded accuracy, if any.
fn reusable_run(dir: &Path, seed: u64, hash: &str, expected_epochs: usize, test: &DatasetSplit) -> Option<RunRecord> {
    let text = fs::read_to_string(dir.join("report.json")).ok()?;
    let record: RunRecord = serde_json::from_str(&text).ok()?;
    if record.seed != seed || record.config_hash != hash || record.epochs.len() != expected_epochs + 1 {
        return None;
    }
    let archive = match ModelArchive::load(&dir.join("model.bin")) {
        Ok(a) => a,
        Err(e) => {
            warn!("ignoring stored run in {}: {e}", dir.display());
            return None;
        }
    };
    let acc = evaluate(&archive.network, test).ok()?;
    if acc != record.final_test_accuracy || archive.manifest.config_hash != hash {
        warn!("stored run in {} does not reproduce its accuracy; retraining", dir.display());
        return None;
    }
    Some(record)
}

/// Trains (or, with `reuse`, reloads) one run and writes its files.
pub fn run_once(config: &ExperimentConfig, data: &Datasets, out: &Path, seed: u64, reuse: bool) -> Result<RunRecord> {
    let hash = config.hash()?;
    let tc = config.training_config(seed);
    let dir = run_dir(out, seed);
    if reuse {
        if let Some(record) = reusable_run(&dir, seed, &hash, tc.epochs, &data.test) {
            info!("reusing {} (test accuracy {:.4})", dir.display(), record.final_test_accuracy);
            return Ok(record);
        }
    }
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let mut net = build_network(config, seed)?;
    let label = format!("{}/{} seed {seed}", config.model.name(), config.variant.name());
    let report = train_with(&mut net, &data.train, &data.test, &tc, |r| {
        info!(
            "{label} epoch {:>3}: loss {:.5} train {:.4} test {:.4}",
            r.epoch, r.train_loss, r.train_acc, r.test_acc
        )
    })?;
    let rows: Vec<EpochRow> = report.records.iter().map(EpochRow::from).collect();
    let record = RunRecord {
        seed,
        config_hash: hash.clone(),
        final_test_accuracy: report.final_test_accuracy().expect("epoch 0 is always recorded"),
        epochs: rows,
    };
    let info = ArchiveInfo {
        architecture: config.model.name().into(),
        variant: config.variant.name().into(),
        seed,
        config_hash: hash,
    };
    ModelArchive::new(net, info).save(&dir.join("model.bin"))?;
    write_curve(&dir.join("curve.csv"), &record.epochs)?;
    write_json(&dir.join("report.json"), &record)?;
    Ok(record)
}

/// Runs seeds `seed..seed+runs` and writes `summary.json`.
pub fn run_experiment(config: &ExperimentConfig, data: &Datasets, out: &Path, reuse: bool) -> Result<Summary> {
    config.validate()?;
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let seeds: Vec<u64> = (0..config.runs as u64).map(|k| config.seed + k).collect();
    let mut accuracies = Vec::with_capacity(seeds.len());
    for &seed in &seeds {
        accuracies.push(run_once(config, data, out, seed, reuse)?.final_test_accuracy);
    }
    let stats = run_stats(&accuracies)?;
    let summary = Summary {
        config_hash: config.hash()?,
        settings: config.resolve()?,
        seeds,
        test_accuracy: AccuracyStats { mean: stats.mean, sigma: stats.sigma, runs: stats.runs, m: stats.m },
        parameters: parameter_table(config)?,
        parameter_count: build_network(config, config.seed)?.params().iter().map(|(p, _)| p.len()).sum(),
    };
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}
