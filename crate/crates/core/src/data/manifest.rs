//! Dataset manifest: a small TOML file naming the per-modality feature files.
//!
//! ```toml
//! num_classes = 4
//! source = "source.features"      # optional source-domain image features
//! source_classes = 6
//! pair_table = "pairs.tsv"        # optional co-occurrence groups
//!
//! [split]
//! train = 0.7
//! test = 0.2
//! validation = 0.1
//! seed = 0
//!
//! [[modality]]
//! tag = "image"
//! file = "image.features"
//! ```
//! Relative paths resolve against the manifest's directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{load_features, split, Dataset, Split, SplitFractions};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestModality {
    pub tag: String,
    pub file: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub test: f64,
    pub validation: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SplitSpec {
    pub fn fractions(&self) -> Result<SplitFractions> {
        SplitFractions::new(self.train, self.test, self.validation)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub num_classes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_classes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_table: Option<PathBuf>,
    pub split: SplitSpec,
    #[serde(rename = "modality")]
    pub modalities: Vec<ManifestModality>,
}

/// A manifest's data: the split target dataset and the optional source set.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedData {
    pub manifest: Manifest,
    pub target: Dataset,
    pub source: Option<Dataset>,
    pub splits: Split,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

pub fn render_pair_table(tags: &[&str], rows: &[Vec<u64>]) -> String {
    let mut out = tags.join("\t");
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(u64::to_string).collect();
        let _ = writeln!(out, "{}", cells.join("\t"));
    }
    out
}

/// Reads a tab-separated pair table whose header names the modalities.
pub fn load_pair_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<u64>>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::Parse {
            path: path.into(),
            line: 1,
            msg: "missing header".into(),
        })?
        .split('\t')
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split('\t')
            .map(|c| c.parse::<u64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::Parse {
                path: path.into(),
                line: i + 2,
                msg: format!("bad id in {line:?}"),
            })?;
        if row.len() != header.len() {
            return Err(Error::Parse {
                path: path.into(),
                line: i + 2,
                msg: format!("{} ids for {} modalities", row.len(), header.len()),
            });
        }
        rows.push(row);
    }
    Ok((header, rows))
}

pub fn load_manifest(path: &Path) -> Result<LoadedData> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: Manifest =
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));

    let mut modalities = Vec::with_capacity(manifest.modalities.len());
    for m in &manifest.modalities {
        let file = load_features(&resolve(base, &m.file))?;
        if file.set.modality != m.tag {
            return Err(Error::Config(format!(
                "manifest lists {} as {:?} but the file says {:?}",
                m.file.display(),
                m.tag,
                file.set.modality
            )));
        }
        modalities.push(file.set);
    }
    let pair_table = match &manifest.pair_table {
        Some(p) => {
            let (tags, rows) = load_pair_table(&resolve(base, p))?;
            let order: Vec<usize> = manifest
                .modalities
                .iter()
                .map(|m| {
                    tags.iter()
                        .position(|t| *t == m.tag)
                        .ok_or_else(|| Error::Config(format!("pair table lacks modality {}", m.tag)))
                })
                .collect::<Result<_>>()?;
            Some(rows.iter().map(|r| order.iter().map(|&i| r[i]).collect()).collect())
        }
        None => None,
    };
    let target = Dataset {
        num_classes: manifest.num_classes,
        modalities,
        pair_table,
    };
    target.validate()?;

    let source = match &manifest.source {
        Some(p) => {
            let file = load_features(&resolve(base, p))?;
            let num_classes = manifest
                .source_classes
                .or(file.num_classes)
                .ok_or_else(|| Error::Config("source_classes is required with a source file".into()))?;
            let ds = Dataset {
                num_classes,
                modalities: vec![file.set],
                pair_table: None,
            };
            ds.validate()?;
            Some(ds)
        }
        None => None,
    };
    let splits = split(&target, manifest.split.fractions()?, manifest.split.seed)?;
    Ok(LoadedData {
        manifest,
        target,
        source,
        splits,
    })
}
