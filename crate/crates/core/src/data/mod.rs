//! Datasets, feature files, splits and the synthetic benchmark generator.

mod features;
mod manifest;
mod split;
mod synthetic;

use std::fs;
use std::path::Path;

pub use features::{load_features, parse_features, render_features, write_features, FeatureFile};
pub use manifest::{load_manifest, load_pair_table, render_pair_table, LoadedData, Manifest, ManifestModality, SplitSpec};
pub use split::{split, Split, SplitFractions};
pub use synthetic::{generate_synthetic, Distortion, ModalitySynth, SyntheticSpec};

use crate::autodiff::DenseMatrix;
use crate::error::{Error, Result};

/// One data item of a single modality.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub id: u64,
    pub features: Vec<f64>,
    pub label: Option<usize>,
}

/// All instances of one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalitySet {
    pub modality: String,
    pub dim: usize,
    pub instances: Vec<Instance>,
}

impl ModalitySet {
    pub fn new(modality: impl Into<String>, dim: usize) -> Self {
        Self {
            modality: modality.into(),
            dim,
            instances: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn find(&self, id: u64) -> Option<&Instance> {
        self.instances.iter().find(|i| i.id == id)
    }

    /// Stacks the features of all instances.
    pub fn feature_matrix(&self) -> DenseMatrix {
        let values = self.instances.iter().flat_map(|i| i.features.iter().copied()).collect();
        DenseMatrix::from_raw(self.instances.len(), self.dim, values)
    }

    pub fn labels(&self) -> Vec<Option<usize>> {
        self.instances.iter().map(|i| i.label).collect()
    }

    pub fn ids(&self) -> Vec<u64> {
        self.instances.iter().map(|i| i.id).collect()
    }
}

/// Instances grouped by modality, plus optional explicit co-occurrence groups.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub num_classes: usize,
    pub modalities: Vec<ModalitySet>,
    /// Each row lists one instance id per modality, in `modalities` order.
    pub pair_table: Option<Vec<Vec<u64>>>,
}

impl Dataset {
    pub fn modality(&self, tag: &str) -> Option<&ModalitySet> {
        self.modalities.iter().find(|m| m.modality == tag)
    }

    pub fn modality_tags(&self) -> Vec<&str> {
        self.modalities.iter().map(|m| m.modality.as_str()).collect()
    }

    pub fn total_instances(&self) -> usize {
        self.modalities.iter().map(ModalitySet::len).sum()
    }

    /// Checks labels, dimensions, id uniqueness and pair-table references.
    pub fn validate(&self) -> Result<()> {
        for m in &self.modalities {
            let mut seen = std::collections::HashSet::new();
            for inst in &m.instances {
                if inst.features.len() != m.dim {
                    return Err(Error::Data(format!(
                        "{} instance {} has {} features, expected {}",
                        m.modality,
                        inst.id,
                        inst.features.len(),
                        m.dim
                    )));
                }
                if let Some(l) = inst.label {
                    if l >= self.num_classes {
                        return Err(Error::Data(format!(
                            "{} instance {} has label {l} outside [0, {})",
                            m.modality, inst.id, self.num_classes
                        )));
                    }
                }
                if !seen.insert(inst.id) {
                    return Err(Error::Data(format!("{}: duplicate instance id {}", m.modality, inst.id)));
                }
                if inst.features.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Data(format!("{} instance {} has non-finite features", m.modality, inst.id)));
                }
            }
        }
        if let Some(table) = &self.pair_table {
            for (r, row) in table.iter().enumerate() {
                if row.len() != self.modalities.len() {
                    return Err(Error::Data(format!(
                        "pair group {r} has {} ids for {} modalities",
                        row.len(),
                        self.modalities.len()
                    )));
                }
                for (m, id) in self.modalities.iter().zip(row) {
                    if m.find(*id).is_none() {
                        return Err(Error::Data(format!(
                            "pair group {r} references missing {} instance {id}",
                            m.modality
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Reorders modalities to match `tags`, failing if any is missing.
    pub fn reordered(&self, tags: &[&str]) -> Result<Dataset> {
        let mut perm = Vec::with_capacity(tags.len());
        for tag in tags {
            let idx = self
                .modalities
                .iter()
                .position(|m| m.modality == *tag)
                .ok_or_else(|| Error::Data(format!("dataset has no modality {tag:?}")))?;
            perm.push(idx);
        }
        Ok(Dataset {
            num_classes: self.num_classes,
            modalities: perm.iter().map(|&i| self.modalities[i].clone()).collect(),
            pair_table: self
                .pair_table
                .as_ref()
                .map(|t| t.iter().map(|row| perm.iter().map(|&i| row[i]).collect()).collect()),
        })
    }
}

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
