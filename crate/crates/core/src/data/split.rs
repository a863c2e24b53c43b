use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, ModalitySet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub test: f64,
    pub validation: f64,
}

impl SplitFractions {
    pub fn new(train: f64, test: f64, validation: f64) -> Result<Self> {
        let f = Self { train, test, validation };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.test, self.validation];
        if parts.iter().any(|p| !(*p >= 0.0 && p.is_finite())) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions must be non-negative and sum to 1, got {parts:?}"
            )));
        }
        Ok(())
    }

    fn as_array(&self) -> [f64; 3] {
        [self.train, self.test, self.validation]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Dataset,
    pub test: Dataset,
    pub validation: Dataset,
}

impl Split {
    pub fn get(&self, name: &str) -> Option<&Dataset> {
        match name {
            "train" => Some(&self.train),
            "test" => Some(&self.test),
            "validation" => Some(&self.validation),
            _ => None,
        }
    }
}

/// Largest-remainder allocation of `n` items over the three fractions.
fn allocate(n: usize, fractions: [f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts = [0usize; 3];
    for (c, e) in counts.iter_mut().zip(&exact) {
        // guard against 0.8 * 10 = 7.999999...
        *c = (e + 1e-9).floor() as usize;
    }
    let mut left = n - counts.iter().sum::<usize>().min(n);
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - counts[a] as f64;
        let rb = exact[b] - counts[b] as f64;
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if fractions[i] > 0.0 {
            counts[i] += 1;
            left -= 1;
        }
    }
    counts
}

fn check_stratum(counts: [usize; 3], fractions: [f64; 3], what: impl Fn() -> String) -> Result<()> {
    const NAMES: [&str; 3] = ["train", "test", "validation"];
    for k in 0..3 {
        if fractions[k] > 0.0 && counts[k] == 0 {
            return Err(Error::Data(format!(
                "{} is too small to appear in the {} split",
                what(),
                NAMES[k]
            )));
        }
    }
    Ok(())
}

/// Class-stratified split. Without a pair table every (class, modality)
/// stratum is split independently; with one, whole groups move together,
/// stratified by the first modality's label.
pub fn split(dataset: &Dataset, fractions: SplitFractions, seed: u64) -> Result<Split> {
    fractions.validate()?;
    dataset.validate()?;
    let f = fractions.as_array();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let empty = || -> Vec<ModalitySet> {
        dataset
            .modalities
            .iter()
            .map(|m| ModalitySet::new(m.modality.clone(), m.dim))
            .collect()
    };
    let mut parts = [empty(), empty(), empty()];
    let mut tables: [Option<Vec<Vec<u64>>>; 3] = Default::default();

    match &dataset.pair_table {
        None => {
            for (mi, m) in dataset.modalities.iter().enumerate() {
                let mut strata: BTreeMap<Option<usize>, Vec<usize>> = BTreeMap::new();
                for (i, inst) in m.instances.iter().enumerate() {
                    strata.entry(inst.label).or_default().push(i);
                }
                for (label, mut idx) in strata {
                    idx.shuffle(&mut rng);
                    let counts = allocate(idx.len(), f);
                    check_stratum(counts, f, || format!("class {label:?} of modality {}", m.modality))?;
                    let mut it = idx.into_iter();
                    for (k, &c) in counts.iter().enumerate() {
                        let mut chosen: Vec<usize> = it.by_ref().take(c).collect();
                        chosen.sort_unstable();
                        parts[k][mi].instances.extend(chosen.into_iter().map(|i| m.instances[i].clone()));
                    }
                }
                for part in parts.iter_mut() {
                    part[mi].instances.sort_by_key(|i| i.id);
                }
            }
        }
        Some(table) => {
            let first = &dataset.modalities[0];
            let mut strata: BTreeMap<Option<usize>, Vec<usize>> = BTreeMap::new();
            for (r, row) in table.iter().enumerate() {
                let label = first.find(row[0]).and_then(|i| i.label);
                strata.entry(label).or_default().push(r);
            }
            let mut assigned: [Vec<usize>; 3] = Default::default();
            for (label, mut rows) in strata {
                rows.shuffle(&mut rng);
                let counts = allocate(rows.len(), f);
                check_stratum(counts, f, || format!("class {label:?}"))?;
                let mut it = rows.into_iter();
                for (k, &c) in counts.iter().enumerate() {
                    assigned[k].extend(it.by_ref().take(c));
                }
            }
            for k in 0..3 {
                assigned[k].sort_unstable();
                let rows: Vec<Vec<u64>> = assigned[k].iter().map(|&r| table[r].clone()).collect();
                for (mi, m) in dataset.modalities.iter().enumerate() {
                    let mut ids: Vec<u64> = rows.iter().map(|row| row[mi]).collect();
                    ids.sort_unstable();
                    ids.dedup();
                    parts[k][mi].instances = ids
                        .iter()
                        .map(|id| m.find(*id).expect("validated").clone())
                        .collect();
                }
                tables[k] = Some(rows);
            }
        }
    }

    let [train, test, validation] = parts;
    let [t_train, t_test, t_val] = tables;
    let make = |modalities, pair_table| Dataset {
        num_classes: dataset.num_classes,
        modalities,
        pair_table,
    };
    Ok(Split {
        train: make(train, t_train),
        test: make(test, t_test),
        validation: make(validation, t_val),
    })
}
