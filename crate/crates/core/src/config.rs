//! Run configuration file (TOML).
//!
//! ```toml
//! seed = 0
//! data = "data/manifest.toml"
//! out_dir = "runs/full"
//!
//! [network]
//! specific_widths = [128, 128]
//! common_widths = [128, 128]
//!
//! [network.weights]
//! lambda = 0.1
//!
//! [schedule]
//! epochs = 30
//!
//! [ablation]
//! no_adver = false
//! ```
//! Every key is optional except `data`; omitted keys take the paper's values.
//! Relative paths resolve against the config file's directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::LoadedData;
use crate::error::{Error, Result};
use crate::losses::{KernelChoice, LossWeights};
use crate::network::{
    Ablation, NetworkConfig, PathwaySpec, DEFAULT_COMMON_WIDTHS, DEFAULT_DISCRIMINATOR_LEARNING_RATE,
    DEFAULT_DISCRIMINATOR_WIDTHS, DEFAULT_LEARNING_RATE, DEFAULT_SPECIFIC_WIDTHS, DEFAULT_WEIGHT_DECAY,
};
use crate::trainer::TrainSchedule;

/// Network hyperparameters independent of the data's dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkSettings {
    pub specific_widths: Vec<usize>,
    pub specific_learning_rate: f64,
    pub common_widths: Vec<usize>,
    pub common_learning_rate: f64,
    pub source_learning_rate: f64,
    pub discriminator_widths: Vec<usize>,
    pub discriminator_learning_rate: f64,
    pub weight_decay: f64,
    pub weights: LossWeights,
    pub transfer_layers: Vec<usize>,
    pub kernel: KernelChoice,
}

impl Default for NetworkSettings {
    fn default() -> Self {
        Self {
            specific_widths: DEFAULT_SPECIFIC_WIDTHS.to_vec(),
            specific_learning_rate: DEFAULT_LEARNING_RATE,
            common_widths: DEFAULT_COMMON_WIDTHS.to_vec(),
            common_learning_rate: DEFAULT_LEARNING_RATE,
            source_learning_rate: DEFAULT_LEARNING_RATE,
            discriminator_widths: DEFAULT_DISCRIMINATOR_WIDTHS.to_vec(),
            discriminator_learning_rate: DEFAULT_DISCRIMINATOR_LEARNING_RATE,
            weight_decay: DEFAULT_WEIGHT_DECAY,
            weights: LossWeights::default(),
            transfer_layers: Vec::new(),
            kernel: KernelChoice::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    /// Dataset manifest.
    pub data: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub network: NetworkSettings,
    #[serde(default)]
    pub schedule: TrainSchedule,
    #[serde(default)]
    pub ablation: Ablation,
}

impl RunConfig {
    pub fn new(data: impl Into<PathBuf>) -> Self {
        Self {
            seed: 0,
            data: data.into(),
            out_dir: None,
            network: NetworkSettings::default(),
            schedule: TrainSchedule::default(),
            ablation: Ablation::default(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config and resolves its relative paths against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        if cfg.data.is_relative() {
            cfg.data = base.join(&cfg.data);
        }
        if let Some(out) = &cfg.out_dir {
            if out.is_relative() {
                cfg.out_dir = Some(base.join(out));
            }
        }
        Ok(cfg)
    }

    pub fn render(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Network configuration for the modalities and classes of `data`.
    pub fn network_config(&self, data: &LoadedData) -> Result<NetworkConfig> {
        let target = &data.target;
        let dims: Vec<(&str, usize)> = target.modalities.iter().map(|m| (m.modality.as_str(), m.dim)).collect();
        if let Some(src) = &data.source {
            let s = &src.modalities[0];
            if s.modality != dims[0].0 || s.dim != dims[0].1 {
                return Err(Error::Config(format!(
                    "source features ({} dim {}) must match the first target modality ({} dim {})",
                    s.modality, s.dim, dims[0].0, dims[0].1
                )));
            }
        }
        let source_classes = data.source.as_ref().map_or(0, |s| s.num_classes);
        let n = &self.network;
        let mut cfg = NetworkConfig::new(&dims, target.num_classes, source_classes);
        cfg.pathways = dims
            .iter()
            .map(|&(tag, dim)| PathwaySpec {
                modality: tag.to_string(),
                input_dim: dim,
                layer_widths: n.specific_widths.clone(),
                learning_rate: n.specific_learning_rate,
            })
            .collect();
        cfg.common_widths = n.common_widths.clone();
        cfg.common_learning_rate = n.common_learning_rate;
        cfg.source_learning_rate = n.source_learning_rate;
        cfg.discriminator_widths = n.discriminator_widths.clone();
        cfg.discriminator_learning_rate = n.discriminator_learning_rate;
        cfg.weight_decay = n.weight_decay;
        cfg.weights = n.weights;
        cfg.transfer_layers = n.transfer_layers.clone();
        cfg.kernel = n.kernel.clone();
        cfg.ablation = self.ablation;
        if cfg.source_enabled() && data.source.is_none() {
            return Err(Error::Config(
                "the source pathway is enabled but the manifest names no source file (use --no-source)".into(),
            ));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bare_config_takes_defaults() {
        let cfg = RunConfig::parse("data = \"m.toml\"").unwrap();
        assert_eq!(cfg.network.specific_widths, vec![4096, 4096]);
        assert_eq!(cfg.network.discriminator_widths, vec![1024, 1024]);
        assert_eq!(cfg.network.weights.ct, 0.001);
        assert_eq!(cfg.network.weights.lambda, 0.1);
        assert_eq!(cfg.network.discriminator_learning_rate, 0.001);
        assert_eq!(cfg.schedule.batch_size_documents, 32);
        assert_eq!(cfg.ablation, Ablation::default());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = RunConfig::new("x/m.toml");
        cfg.network.specific_widths = vec![8, 8];
        cfg.ablation.no_adver = true;
        cfg.schedule.epochs = 3;
        assert_eq!(RunConfig::parse(&cfg.render()).unwrap(), cfg);
    }

    #[test]
    fn unknown_fields_are_not_silently_misparsed() {
        assert!(RunConfig::parse("seed = \"zero\"\ndata = \"m\"").is_err());
    }
}
