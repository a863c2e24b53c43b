use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::losses::{KernelChoice, LossWeights};

/// Learning rate of every fully-connected layer outside the discriminator.
pub const DEFAULT_LEARNING_RATE: f64 = 0.01;
/// Learning rate of the modality discriminator layers.
pub const DEFAULT_DISCRIMINATOR_LEARNING_RATE: f64 = 0.001;
pub const DEFAULT_WEIGHT_DECAY: f64 = 0.0005;
pub const DEFAULT_SPECIFIC_WIDTHS: [usize; 2] = [4096, 4096];
pub const DEFAULT_COMMON_WIDTHS: [usize; 2] = [4096, 4096];
pub const DEFAULT_DISCRIMINATOR_WIDTHS: [usize; 2] = [1024, 1024];

/// One modality-specific pathway.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathwaySpec {
    pub modality: String,
    pub input_dim: usize,
    #[serde(default = "default_specific_widths")]
    pub layer_widths: Vec<usize>,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
}

impl PathwaySpec {
    pub fn new(modality: impl Into<String>, input_dim: usize) -> Self {
        Self {
            modality: modality.into(),
            input_dim,
            layer_widths: default_specific_widths(),
            learning_rate: DEFAULT_LEARNING_RATE,
        }
    }

    pub fn with_widths(mut self, widths: Vec<usize>) -> Self {
        self.layer_widths = widths;
        self
    }

    pub fn output_width(&self) -> usize {
        *self.layer_widths.last().unwrap_or(&self.input_dim)
    }
}

/// Component switches for the ablation variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    /// Drop the source image pathway (no ST, no SDS).
    pub no_source: bool,
    /// Drop the shared common layers and the discriminator; each modality
    /// gets its own classifier on its specific representation.
    pub no_sl_net: bool,
    /// Drop the modality discriminator branch.
    pub no_adver: bool,
    /// Drop the source supervision loss.
    pub no_sds: bool,
}

impl Ablation {
    pub fn label(&self) -> &'static str {
        match (self.no_source, self.no_sl_net, self.no_adver, self.no_sds) {
            (false, false, false, false) => "Full",
            (true, false, false, false) => "NoSource",
            (false, true, false, false) => "NoSLnet",
            (false, false, true, false) => "NoAdver",
            (false, false, false, true) => "NoSDS",
            _ => "Custom",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Target-domain pathways; the first one is the image modality shared
    /// with the source domain.
    pub pathways: Vec<PathwaySpec>,
    pub num_classes_target: usize,
    pub num_classes_source: usize,
    #[serde(default = "default_common_widths")]
    pub common_widths: Vec<usize>,
    #[serde(default = "default_lr")]
    pub common_learning_rate: f64,
    #[serde(default = "default_lr")]
    pub source_learning_rate: f64,
    #[serde(default = "default_discriminator_widths")]
    pub discriminator_widths: Vec<usize>,
    #[serde(default = "default_discriminator_lr")]
    pub discriminator_learning_rate: f64,
    /// Optional explicit discriminator output width; must equal the number
    /// of modalities when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discriminator_outputs: Option<usize>,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default)]
    pub weights: LossWeights,
    /// Indices of specific-representation layers carrying ST and CT. Empty
    /// means every specific layer.
    #[serde(default)]
    pub transfer_layers: Vec<usize>,
    #[serde(default)]
    pub kernel: KernelChoice,
    #[serde(default)]
    pub ablation: Ablation,
}

fn default_specific_widths() -> Vec<usize> {
    DEFAULT_SPECIFIC_WIDTHS.to_vec()
}
fn default_common_widths() -> Vec<usize> {
    DEFAULT_COMMON_WIDTHS.to_vec()
}
fn default_discriminator_widths() -> Vec<usize> {
    DEFAULT_DISCRIMINATOR_WIDTHS.to_vec()
}
fn default_lr() -> f64 {
    DEFAULT_LEARNING_RATE
}
fn default_discriminator_lr() -> f64 {
    DEFAULT_DISCRIMINATOR_LEARNING_RATE
}
fn default_weight_decay() -> f64 {
    DEFAULT_WEIGHT_DECAY
}

impl NetworkConfig {
    /// Paper-scale defaults for the given modalities and input dimensions.
    pub fn new(modalities: &[(&str, usize)], num_classes_target: usize, num_classes_source: usize) -> Self {
        Self {
            pathways: modalities
                .iter()
                .map(|&(tag, dim)| PathwaySpec::new(tag, dim))
                .collect(),
            num_classes_target,
            num_classes_source,
            common_widths: default_common_widths(),
            common_learning_rate: DEFAULT_LEARNING_RATE,
            source_learning_rate: DEFAULT_LEARNING_RATE,
            discriminator_widths: default_discriminator_widths(),
            discriminator_learning_rate: DEFAULT_DISCRIMINATOR_LEARNING_RATE,
            discriminator_outputs: None,
            weight_decay: DEFAULT_WEIGHT_DECAY,
            weights: LossWeights::default(),
            transfer_layers: Vec::new(),
            kernel: KernelChoice::MedianHeuristic,
            ablation: Ablation::default(),
        }
    }

    /// Sets every layer width (specific, common, discriminator) to `width`.
    pub fn with_uniform_width(mut self, width: usize) -> Self {
        for p in &mut self.pathways {
            p.layer_widths = vec![width; p.layer_widths.len()];
        }
        self.common_widths = vec![width; self.common_widths.len()];
        self.discriminator_widths = vec![width; self.discriminator_widths.len()];
        self
    }

    pub fn modalities(&self) -> Vec<&str> {
        self.pathways.iter().map(|p| p.modality.as_str()).collect()
    }

    pub fn modality_index(&self, tag: &str) -> Option<usize> {
        self.pathways.iter().position(|p| p.modality == tag)
    }

    pub fn image(&self) -> &PathwaySpec {
        &self.pathways[0]
    }

    pub fn source_enabled(&self) -> bool {
        !self.ablation.no_source
    }

    pub fn sds_enabled(&self) -> bool {
        self.source_enabled() && !self.ablation.no_sds
    }

    pub fn adversarial_enabled(&self) -> bool {
        !self.ablation.no_adver && !self.ablation.no_sl_net
    }

    /// Specific layers carrying the transfer losses.
    pub fn resolved_transfer_layers(&self) -> Vec<usize> {
        if self.transfer_layers.is_empty() {
            (0..self.image().layer_widths.len()).collect()
        } else {
            self.transfer_layers.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.pathways.is_empty() {
            return Err(Error::Config("at least one modality is required".into()));
        }
        let depth = self.image().layer_widths.len();
        for p in &self.pathways {
            if p.input_dim == 0 {
                return Err(Error::Config(format!("modality {}: input_dim must be > 0", p.modality)));
            }
            if p.layer_widths.is_empty() || p.layer_widths.contains(&0) {
                return Err(Error::Config(format!(
                    "modality {}: layer widths must be non-empty and positive, got {:?}",
                    p.modality, p.layer_widths
                )));
            }
            if !(p.learning_rate > 0.0) {
                return Err(Error::Config(format!(
                    "modality {}: learning rate must be positive",
                    p.modality
                )));
            }
        }
        for (i, p) in self.pathways.iter().enumerate() {
            if self.pathways[..i].iter().any(|q| q.modality == p.modality) {
                return Err(Error::Config(format!("duplicate modality {}", p.modality)));
            }
        }
        let transfer = self.resolved_transfer_layers();
        if self.pathways.len() > 1 {
            // cross-modal transfer compares image layers with every other pathway
            for p in &self.pathways[1..] {
                for &l in &transfer {
                    if l >= p.layer_widths.len() || p.layer_widths[l] != self.image().layer_widths[l] {
                        return Err(Error::Config(format!(
                            "transfer layer {l}: modality {} width {:?} does not match image width {:?}",
                            p.modality,
                            p.layer_widths.get(l),
                            self.image().layer_widths.get(l)
                        )));
                    }
                }
            }
        }
        if transfer.iter().any(|&l| l >= depth) {
            return Err(Error::Config(format!(
                "transfer layers {transfer:?} exceed image depth {depth}"
            )));
        }
        if !self.ablation.no_sl_net {
            if self.common_widths.is_empty() || self.common_widths.contains(&0) {
                return Err(Error::Config(format!(
                    "common widths must be non-empty and positive, got {:?}",
                    self.common_widths
                )));
            }
            let w = self.image().output_width();
            if let Some(p) = self.pathways.iter().find(|p| p.output_width() != w) {
                return Err(Error::Config(format!(
                    "modality {} output width {} differs from image width {w}; shared layers need equal widths",
                    p.modality,
                    p.output_width()
                )));
            }
        }
        if self.adversarial_enabled() && self.discriminator_widths.contains(&0) {
            return Err(Error::Config("discriminator widths must be positive".into()));
        }
        if let Some(n) = self.discriminator_outputs {
            if n != self.pathways.len() {
                return Err(Error::Config(format!(
                    "discriminator output width {n} must equal the number of modalities {}",
                    self.pathways.len()
                )));
            }
        }
        if self.num_classes_target < 2 {
            return Err(Error::Config("need at least two target classes".into()));
        }
        if self.sds_enabled() && self.num_classes_source < 2 {
            return Err(Error::Config("need at least two source classes".into()));
        }
        for lr in [
            self.common_learning_rate,
            self.source_learning_rate,
            self.discriminator_learning_rate,
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
            }
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config("weight decay must be non-negative".into()));
        }
        self.weights.validate()
    }

    /// SHA-256 of the canonical TOML rendering.
    pub fn digest(&self) -> [u8; 32] {
        let text = toml::to_string(self).expect("network config serializes");
        Sha256::digest(text.as_bytes()).into()
    }

    pub fn digest_hex(&self) -> String {
        hex::encode(self.digest())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_reported_hyperparameters() {
        let c = NetworkConfig::new(&[("image", 10), ("text", 5)], 4, 6);
        assert_eq!(c.image().layer_widths, vec![4096, 4096]);
        assert_eq!(c.common_widths, vec![4096, 4096]);
        assert_eq!(c.discriminator_widths, vec![1024, 1024]);
        assert_eq!(c.image().learning_rate, 0.01);
        assert_eq!(c.discriminator_learning_rate, 0.001);
        assert_eq!(c.weight_decay, 0.0005);
        c.validate().unwrap();
    }

    #[test]
    fn toml_round_trip_preserves_digest() {
        let mut c = NetworkConfig::new(&[("image", 10), ("text", 5)], 4, 6).with_uniform_width(8);
        c.ablation.no_adver = true;
        let text = toml::to_string(&c).unwrap();
        let back: NetworkConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.digest(), c.digest());
    }

    #[test]
    fn rejects_bad_configs() {
        let base = NetworkConfig::new(&[("image", 10), ("text", 5)], 4, 6).with_uniform_width(8);
        let mut c = base.clone();
        c.pathways[1].layer_widths = vec![];
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.discriminator_outputs = Some(5);
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.pathways[1].modality = "image".into();
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.transfer_layers = vec![3];
        assert!(c.validate().is_err());
        let mut c = base;
        c.pathways[1].layer_widths = vec![8, 4];
        assert!(c.validate().is_err());
    }

    #[test]
    fn ablation_labels() {
        let mut a = Ablation::default();
        assert_eq!(a.label(), "Full");
        a.no_adver = true;
        assert_eq!(a.label(), "NoAdver");
        a.no_sds = true;
        assert_eq!(a.label(), "Custom");
    }
}
