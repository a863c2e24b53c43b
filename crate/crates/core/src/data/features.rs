//! Plain-text feature files.
//!
//! ```text
//! #mhtn-features modality=image count=2 dim=3 classes=4
//! 0	1	0.5	-1.25	3
//! 1	-1	0	0	2.5
//! ```
//! Each body row is tab separated: instance id, label (`-1` when unlabeled),
//! then `dim` feature values. Floats are written in shortest round-trip form.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Instance, ModalitySet};
use crate::error::{Error, Result};

const HEADER_TAG: &str = "#mhtn-features";

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFile {
    pub set: ModalitySet,
    pub num_classes: Option<usize>,
}

pub fn render_features(set: &ModalitySet, num_classes: Option<usize>) -> String {
    let mut out = format!(
        "{HEADER_TAG} modality={} count={} dim={}",
        set.modality,
        set.instances.len(),
        set.dim
    );
    if let Some(c) = num_classes {
        let _ = write!(out, " classes={c}");
    }
    out.push('\n');
    for inst in &set.instances {
        let label = inst.label.map_or(-1, |l| l as i64);
        let _ = write!(out, "{}\t{label}", inst.id);
        for v in &inst.features {
            let _ = write!(out, "\t{v}");
        }
        out.push('\n');
    }
    out
}

pub fn write_features(path: &Path, set: &ModalitySet, num_classes: Option<usize>) -> Result<()> {
    super::write_atomic(path, render_features(set, num_classes).as_bytes())
}

pub fn load_features(path: &Path) -> Result<FeatureFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_features(&text, path)
}

pub fn parse_features(text: &str, path: &Path) -> Result<FeatureFile> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| err(1, "missing header".into()))?;
    let mut fields = header.split_whitespace();
    if fields.next() != Some(HEADER_TAG) {
        return Err(err(1, format!("header must start with {HEADER_TAG}")));
    }
    let (mut modality, mut count, mut dim, mut classes) = (None, None, None, None);
    for field in fields {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| err(1, format!("malformed header field {field:?}")))?;
        let num = || {
            value
                .parse::<usize>()
                .map_err(|_| err(1, format!("header field {key} is not a count: {value:?}")))
        };
        match key {
            "modality" => modality = Some(value.to_string()),
            "count" => count = Some(num()?),
            "dim" => dim = Some(num()?),
            "classes" => classes = Some(num()?),
            other => return Err(err(1, format!("unknown header field {other:?}"))),
        }
    }
    let modality = modality.ok_or_else(|| err(1, "header lacks modality".into()))?;
    let count = count.ok_or_else(|| err(1, "header lacks count".into()))?;
    let dim = dim.ok_or_else(|| err(1, "header lacks dim".into()))?;

    let mut set = ModalitySet::new(modality, dim);
    let mut seen = std::collections::HashSet::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split('\t').collect();
        if cells.len() != dim + 2 {
            return Err(err(
                line_no,
                format!("row has {} feature values, expected {dim}", cells.len().saturating_sub(2)),
            ));
        }
        let id: u64 = cells[0]
            .parse()
            .map_err(|_| err(line_no, format!("bad instance id {:?}", cells[0])))?;
        if !seen.insert(id) {
            return Err(err(line_no, format!("duplicate instance id {id}")));
        }
        let raw_label: i64 = cells[1]
            .parse()
            .map_err(|_| err(line_no, format!("bad label {:?}", cells[1])))?;
        let label = match raw_label {
            -1 => None,
            l if l >= 0 => {
                let l = l as usize;
                if classes.is_some_and(|c| l >= c) {
                    return Err(err(line_no, format!("label {l} outside [0, {})", classes.unwrap())));
                }
                Some(l)
            }
            l => return Err(err(line_no, format!("label {l} is negative and not the -1 sentinel"))),
        };
        let mut features = Vec::with_capacity(dim);
        for (j, cell) in cells[2..].iter().enumerate() {
            let v: f64 = cell
                .parse()
                .map_err(|_| err(line_no, format!("feature {j} is not a number: {cell:?}")))?;
            if !v.is_finite() {
                return Err(err(line_no, format!("feature {j} is not finite: {cell}")));
            }
            features.push(v);
        }
        set.instances.push(Instance { id, features, label });
    }
    if set.instances.len() != count {
        return Err(err(1, format!("header count {count} but {} rows", set.instances.len())));
    }
    Ok(FeatureFile {
        set,
        num_classes: classes,
    })
}
