//! Experiment configuration: the JSON schema behind the CLI.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::nn::NetworkSpec;
use crate::opt::OptConfig;
use crate::prior::FunctionalPrior;
use crate::train::{Mode, Resampling, TrainSettings};
use crate::transfer::PretrainConfig;

/// Top-level experiment description, read from a JSON file; CLI flags
/// override individual keys.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub network: NetworkConfig,
    pub mode: ModeConfig,
    pub ensemble_size: usize,
    #[serde(default)]
    pub resampling: Resampling,
    #[serde(default)]
    pub seed: u64,
    /// Per-output functional priors in scaled coordinates. Required for
    /// correlated and per-layer factorized modes.
    #[serde(default)]
    pub priors: Vec<FunctionalPrior>,
    #[serde(default)]
    pub optimizer: OptConfig,
    #[serde(default)]
    pub pretrain: PretrainConfig,
    pub dataset: DatasetConfig,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs/out")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    #[serde(default = "default_slope")]
    pub activation_slope: f64,
}

fn default_slope() -> f64 {
    0.01
}

impl NetworkConfig {
    pub fn to_spec(&self) -> Result<NetworkSpec> {
        NetworkSpec::new(
            self.input_dim,
            self.hidden.clone(),
            self.output_dim,
            self.activation_slope,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeConfig {
    Vanilla,
    Factorized,
    Correlated,
}

impl ModeConfig {
    pub fn to_mode(self, scalar_lambda: Option<f64>) -> Mode {
        match self {
            ModeConfig::Vanilla => Mode::Vanilla,
            ModeConfig::Correlated => Mode::Correlated,
            ModeConfig::Factorized => match scalar_lambda {
                Some(l) => Mode::Factorized {
                    strength: crate::train::FactorizedStrength::ScalarLambda(l),
                },
                None => Mode::factorized_per_layer(),
            },
        }
    }
}

impl std::str::FromStr for ModeConfig {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vanilla" => Ok(ModeConfig::Vanilla),
            "factorized" => Ok(ModeConfig::Factorized),
            "correlated" => Ok(ModeConfig::Correlated),
            other => Err(Error::Config(format!(
                "mode must be vanilla|factorized|correlated, got '{other}'"
            ))),
        }
    }
}

/// Where the training data comes from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetConfig {
    /// Built-in 1D benchmark generator.
    OneD {
        #[serde(default)]
        seed: u64,
    },
    /// CSV pair: data plus its sidecar metadata file.
    Csv { data: PathBuf, meta: PathBuf },
}

/// Optional scalar-lambda override for factorized mode, stored beside the
/// main config when present.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct FactorizedOptions {
    pub scalar_lambda: Option<f64>,
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let spec = self.network.to_spec()?;
        if self.ensemble_size == 0 {
            return Err(Error::Config("ensemble_size must be >= 1".into()));
        }
        let needs_prior = matches!(self.mode, ModeConfig::Correlated | ModeConfig::Factorized);
        if needs_prior && self.priors.is_empty() {
            return Err(Error::Config(format!(
                "mode '{:?}' requires a prior specification; none given",
                self.mode
            )));
        }
        if !self.priors.is_empty() && self.priors.len() != spec.output_dim() {
            return Err(Error::Config(format!(
                "got {} priors for {} outputs",
                self.priors.len(),
                spec.output_dim()
            )));
        }
        for p in &self.priors {
            p.validate(spec.input_dim())
                .map_err(|e| Error::Config(format!("prior: {e}")))?;
        }
        if let DatasetConfig::Csv { data, meta } = &self.dataset {
            for p in [data, meta] {
                if !p.exists() {
                    return Err(Error::Config(format!("missing file: {}", p.display())));
                }
            }
        }
        Ok(())
    }

    pub fn to_settings(&self, scalar_lambda: Option<f64>) -> TrainSettings {
        TrainSettings {
            mode: self.mode.to_mode(scalar_lambda),
            ensemble_size: self.ensemble_size,
            resampling: self.resampling,
            stage2: self.optimizer.clone(),
            pretrain: self.pretrain.clone(),
            truncation_tol: crate::lowrank::DEFAULT_TRUNCATION_TOL,
            scaling: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_config() -> ExperimentConfig {
        ExperimentConfig {
            network: NetworkConfig {
                input_dim: 1,
                hidden: vec![8],
                output_dim: 1,
                activation_slope: 0.01,
            },
            mode: ModeConfig::Vanilla,
            ensemble_size: 4,
            resampling: Resampling::Likelihood,
            seed: 0,
            priors: Vec::new(),
            optimizer: OptConfig::default(),
            pretrain: PretrainConfig::default(),
            dataset: DatasetConfig::OneD { seed: 0 },
            out_dir: PathBuf::from("runs/test"),
        }
    }

    #[test]
    fn vanilla_without_prior_validates() {
        assert!(base_config().validate().is_ok());
    }

    #[test]
    fn correlated_without_prior_rejected() {
        let mut cfg = base_config();
        cfg.mode = ModeConfig::Correlated;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn prior_count_must_match_outputs() {
        let mut cfg = base_config();
        cfg.mode = ModeConfig::Correlated;
        cfg.priors = vec![
            FunctionalPrior::one_d(1.0, 0.0, 0.5, 0.5),
            FunctionalPrior::one_d(1.0, 0.0, 0.5, 0.5),
        ];
        assert!(cfg.validate().is_err());
        cfg.priors.truncate(1);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn json_roundtrip() {
        let mut cfg = base_config();
        cfg.mode = ModeConfig::Correlated;
        cfg.priors = vec![FunctionalPrior::one_d(2.0, -0.3, 0.5, 0.16)];
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back.ensemble_size, 4);
        assert_eq!(back.priors.len(), 1);
        back.validate().unwrap();
    }
}
