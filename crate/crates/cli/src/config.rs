//! Experiment configuration files (JSON) and their resolution into concrete settings.

use std::fs;
use std::path::{Path, PathBuf};

use mponet_core::network::{fc2_mpo_structures, lenet5_mpo_structures, Architecture};
use mponet_core::{MpoStructure, TrainingConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    #[default]
    Fc2,
    Lenet5,
}

impl ModelKind {
    pub fn architecture(self) -> Architecture {
        match self {
            ModelKind::Fc2 => Architecture::Fc2,
            ModelKind::Lenet5 => Architecture::Lenet5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Fc2 => "fc2",
            ModelKind::Lenet5 => "lenet5",
        }
    }

    pub fn default_epochs(self) -> usize {
        match self {
            ModelKind::Fc2 => 25,
            ModelKind::Lenet5 => 40,
        }
    }

    /// Names of the linear layers an MPO can replace, in network order.
    pub fn linear_layer_names(self) -> &'static [&'static str] {
        match self {
            ModelKind::Fc2 => &["fc1", "fc2"],
            ModelKind::Lenet5 => &["fc1", "fc2", "fc3"],
        }
    }

    /// `(N_x, N_y)` of each replaceable linear layer.
    pub fn linear_layer_sizes(self) -> Vec<(usize, usize)> {
        match self {
            ModelKind::Fc2 => vec![(784, mponet_core::network::FC2_HIDDEN), (mponet_core::network::FC2_HIDDEN, 10)],
            ModelKind::Lenet5 => mponet_core::network::LENET5_REPLACED.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum VariantKind {
    Dense,
    #[default]
    Mpo,
}

impl VariantKind {
    pub fn name(self) -> &'static str {
        match self {
            VariantKind::Dense => "dense",
            VariantKind::Mpo => "mpo",
        }
    }
}

/// Explicit factorization of one linear layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructureSpec {
    pub output_dims: Vec<usize>,
    pub input_dims: Vec<usize>,
    /// Either one uniform value or the `n − 1` interior bonds.
    pub bond_dims: Vec<usize>,
}

impl StructureSpec {
    pub fn build(&self) -> Result<MpoStructure> {
        let bonds = if self.bond_dims.len() == 1 {
            mponet_core::BondDims::Uniform(self.bond_dims[0])
        } else {
            mponet_core::BondDims::PerBond(self.bond_dims.clone())
        };
        Ok(MpoStructure::new(self.output_dims.clone(), self.input_dims.clone(), bonds)?)
    }

    pub fn from_structure(s: &MpoStructure) -> Self {
        let n = s.n();
        StructureSpec {
            output_dims: s.output_dims().to_vec(),
            input_dims: s.input_dims().to_vec(),
            bond_dims: s.bond_dims()[1..n].to_vec(),
        }
    }
}

/// Optional overrides of the optimizer defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub momentum: Option<f64>,
    pub l2_alpha: Option<f64>,
    pub batch_size: Option<usize>,
    pub lr_decay_epochs: Option<Vec<usize>>,
    pub lr_decay_factor: Option<f64>,
}

/// The on-disk configuration schema. Every field is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    pub variant: VariantKind,
    /// Uniform bond dimension; `None` uses the architecture's default structures.
    pub bond_dim: Option<usize>,
    /// Explicit factorizations, one per replaceable linear layer.
    pub structures: Option<Vec<StructureSpec>>,
    pub training: TrainingSection,
    pub data_dir: Option<PathBuf>,
    pub runs: usize,
    pub seed: u64,
    pub l2: bool,
    /// Rank-χ truncation applied to every input image.
    pub input_chi: Option<usize>,
    /// Use only the first `n` training / test samples.
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: ModelKind::Fc2,
            variant: VariantKind::Mpo,
            bond_dim: None,
            structures: None,
            training: TrainingSection::default(),
            data_dir: None,
            runs: 5,
            seed: 0,
            l2: true,
            input_chi: None,
            train_limit: None,
            test_limit: None,
        }
    }
}

/// Everything that determines the outcome of one seeded run, in canonical form.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolvedSettings {
    pub model: ModelKind,
    pub variant: VariantKind,
    pub structures: Vec<StructureSpec>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub l2_alpha: f64,
    pub batch_size: usize,
    pub lr_decay_epochs: Vec<usize>,
    pub lr_decay_factor: f64,
    pub input_chi: Option<usize>,
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::format(path, format!("config JSON: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(CliError::Usage("runs must be at least 1".into()));
        }
        if self.bond_dim == Some(0) {
            return Err(CliError::Usage("bond dimension must be at least 1".into()));
        }
        if self.variant == VariantKind::Dense && (self.bond_dim.is_some() || self.structures.is_some()) {
            return Err(CliError::Usage("bond_dim and structures apply only to the mpo variant".into()));
        }
        if self.bond_dim.is_some() && self.structures.is_some() {
            return Err(CliError::Usage("give either bond_dim or structures, not both".into()));
        }
        if let Some(chi) = self.input_chi {
            if chi == 0 || chi > 28 {
                return Err(CliError::Usage(format!("chi = {chi} outside 1..=28")));
            }
        }
        if let Some(dir) = &self.data_dir {
            if !dir.is_dir() {
                return Err(CliError::Usage(format!("data directory {} does not exist", dir.display())));
            }
        }
        Ok(())
    }

    /// MPO structures for the replaceable layers (empty for the dense variant).
    pub fn mpo_structures(&self) -> Result<Vec<MpoStructure>> {
        if self.variant == VariantKind::Dense {
            return Ok(Vec::new());
        }
        if let Some(specs) = &self.structures {
            let expected = self.model.linear_layer_names().len();
            if specs.len() != expected {
                return Err(CliError::Usage(format!(
                    "{} needs {expected} structures, got {}",
                    self.model.name(),
                    specs.len()
                )));
            }
            let built = specs.iter().map(StructureSpec::build).collect::<Result<Vec<_>>>()?;
            for (s, (nx, ny)) in built.iter().zip(self.model.linear_layer_sizes()) {
                if s.input_size() != nx || s.output_size() != ny {
                    return Err(CliError::Usage(format!("{s} does not map {nx} -> {ny}")));
                }
            }
            return Ok(built);
        }
        Ok(match self.model {
            ModelKind::Fc2 => fc2_mpo_structures(self.bond_dim.unwrap_or(16))?.to_vec(),
            ModelKind::Lenet5 => lenet5_mpo_structures(self.bond_dim)?.to_vec(),
        })
    }

    /// Training settings for the run with `seed`.
    pub fn training_config(&self, seed: u64) -> TrainingConfig {
        let t = &self.training;
        let epochs = t.epochs.unwrap_or(self.model.default_epochs());
        let base = TrainingConfig::for_epochs(epochs);
        TrainingConfig {
            learning_rate: t.learning_rate.unwrap_or(base.learning_rate),
            momentum: t.momentum.unwrap_or(base.momentum),
            l2_alpha: if self.l2 { t.l2_alpha.unwrap_or(base.l2_alpha) } else { 0.0 },
            batch_size: t.batch_size.unwrap_or(base.batch_size),
            epochs,
            seed,
            lr_decay_epochs: t.lr_decay_epochs.clone().unwrap_or(base.lr_decay_epochs),
            lr_decay_factor: t.lr_decay_factor.unwrap_or(base.lr_decay_factor),
        }
    }

    pub fn resolve(&self) -> Result<ResolvedSettings> {
        self.validate()?;
        let tc = self.training_config(0);
        tc.validate()?;
        Ok(ResolvedSettings {
            model: self.model,
            variant: self.variant,
            structures: self.mpo_structures()?.iter().map(StructureSpec::from_structure).collect(),
            epochs: tc.epochs,
            learning_rate: tc.learning_rate,
            momentum: tc.momentum,
            l2_alpha: tc.l2_alpha,
            batch_size: tc.batch_size,
            lr_decay_epochs: tc.lr_decay_epochs,
            lr_decay_factor: tc.lr_decay_factor,
            input_chi: self.input_chi,
            train_limit: self.train_limit,
            test_limit: self.test_limit,
        })
    }

    /// SHA-256 of the canonical JSON of [`ResolvedSettings`]. Paths, run count and
    /// base seed are excluded, so runs with equal settings and seed share a hash.
    pub fn hash(&self) -> Result<String> {
        let json = serde_json::to_vec(&self.resolve()?).expect("settings serialize");
        Ok(hex::encode(Sha256::digest(json)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let c: ExperimentConfig = serde_json::from_str(r#"{"model":"lenet5","training":{"epochs":3}}"#).unwrap();
        assert_eq!(c.runs, 5);
        assert!(c.l2);
        let t = c.training_config(7);
        assert_eq!((t.epochs, t.seed, t.lr_decay_epochs.clone()), (3, 7, vec![2]));
        assert_eq!(c.mpo_structures().unwrap().len(), 3);
        let no_l2 = ExperimentConfig { l2: false, ..c.clone() };
        assert_eq!(no_l2.training_config(0).l2_alpha, 0.0);
        assert_ne!(c.hash().unwrap(), no_l2.hash().unwrap());
        assert_eq!(c.hash().unwrap(), ExperimentConfig { runs: 2, seed: 9, ..c.clone() }.hash().unwrap());
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"modle":"fc2"}"#).is_err());
        assert!(ExperimentConfig { runs: 0, ..Default::default() }.validate().is_err());
        assert!(ExperimentConfig { bond_dim: Some(0), ..Default::default() }.validate().is_err());
        let wrong = ExperimentConfig {
            structures: Some(vec![
                StructureSpec { output_dims: vec![16, 16], input_dims: vec![28, 28], bond_dims: vec![4] },
                StructureSpec { output_dims: vec![2, 4], input_dims: vec![16, 16], bond_dims: vec![4] },
            ]),
            ..Default::default()
        };
        assert!(wrong.mpo_structures().is_err());
    }

    #[test]
    fn explicit_structures() {
        let c = ExperimentConfig {
            structures: Some(vec![
                StructureSpec { output_dims: vec![16, 16], input_dims: vec![28, 28], bond_dims: vec![4] },
                StructureSpec { output_dims: vec![10, 1], input_dims: vec![16, 16], bond_dims: vec![4] },
            ]),
            ..Default::default()
        };
        let s = c.mpo_structures().unwrap();
        assert_eq!(s[0].param_count(), 16 * 28 * 4 + 4 * 16 * 28);
    }
}
