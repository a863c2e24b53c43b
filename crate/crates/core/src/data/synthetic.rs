//! Seeded synthetic multimodal benchmark.
//!
//! Every class owns a Gaussian prototype in a shared latent space. Each
//! modality sees that prototype through its own fixed linear map with
//! orthonormal columns, plus isotropic Gaussian noise, so the class structure
//! is shared while raw features are incomparable across modalities. The
//! source domain draws its own, disjoint, classes from the same latent space
//! and observes them through the image modality's map.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Instance, ModalitySet};
use crate::autodiff::DenseMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distortion {
    /// Observed features equal the latent vector; needs `dim == latent_dim`.
    Identity,
    RandomOrthonormal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalitySynth {
    pub tag: String,
    pub dim: usize,
    pub noise: f64,
    pub distortion: Distortion,
}

impl ModalitySynth {
    pub fn new(tag: impl Into<String>, dim: usize, noise: f64) -> Self {
        Self {
            tag: tag.into(),
            dim,
            noise,
            distortion: Distortion::RandomOrthonormal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub per_class: usize,
    pub latent_dim: usize,
    /// Standard deviation of the latent class prototypes.
    pub prototype_scale: f64,
    /// First entry is the image modality shared with the source domain.
    pub modalities: Vec<ModalitySynth>,
    pub source_classes: usize,
    pub source_per_class: usize,
    /// Emit a pair table linking the `j`-th instance of a class across modalities.
    pub paired: bool,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    /// 4 classes, 3 modalities, 50 instances per class and modality.
    fn default() -> Self {
        Self {
            num_classes: 4,
            per_class: 50,
            latent_dim: 16,
            prototype_scale: 1.0,
            modalities: vec![
                ModalitySynth::new("image", 32, 0.5),
                ModalitySynth::new("text", 24, 0.5),
                ModalitySynth::new("audio", 40, 0.5),
            ],
            source_classes: 6,
            source_per_class: 50,
            paired: false,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("num_classes", self.num_classes),
            ("per_class", self.per_class),
            ("latent_dim", self.latent_dim),
            ("source_classes", self.source_classes),
            ("source_per_class", self.source_per_class),
            ("modalities", self.modalities.len()),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("synthetic spec: {name} must be >= 1")));
        }
        if !(self.prototype_scale >= 0.0 && self.prototype_scale.is_finite()) {
            return Err(Error::Config("synthetic spec: prototype_scale must be >= 0".into()));
        }
        for m in &self.modalities {
            if !(m.noise >= 0.0 && m.noise.is_finite()) {
                return Err(Error::Config(format!("synthetic spec: {} noise must be >= 0", m.tag)));
            }
            match m.distortion {
                Distortion::Identity if m.dim != self.latent_dim => {
                    return Err(Error::Config(format!(
                        "synthetic spec: identity distortion for {} needs dim {} == latent_dim {}",
                        m.tag, m.dim, self.latent_dim
                    )))
                }
                Distortion::RandomOrthonormal if m.dim < self.latent_dim => {
                    return Err(Error::Config(format!(
                        "synthetic spec: {} dim {} must be >= latent_dim {}",
                        m.tag, m.dim, self.latent_dim
                    )))
                }
                _ => {}
            }
        }
        for (i, m) in self.modalities.iter().enumerate() {
            if self.modalities[..i].iter().any(|o| o.tag == m.tag) {
                return Err(Error::Config(format!("synthetic spec: duplicate modality {}", m.tag)));
            }
        }
        Ok(())
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// `latent x dim` map whose rows are orthonormal (Gram–Schmidt on Gaussians).
fn orthonormal_map(latent: usize, dim: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(latent);
    while basis.len() < latent {
        let mut v: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            for (x, y) in v.iter_mut().zip(b) {
                *x -= dot * y;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    DenseMatrix::from_raw(latent, dim, basis.concat())
}

fn observe(prototype: &[f64], map: &DenseMatrix, noise: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let dim = map.cols();
    let mut x = vec![0.0; dim];
    for (k, &z) in prototype.iter().enumerate() {
        for (xi, &a) in x.iter_mut().zip(map.row(k)) {
            *xi += z * a;
        }
    }
    for xi in &mut x {
        *xi += noise * gaussian(rng);
    }
    x
}

/// Returns `(source, target)` datasets; identical specs give identical data.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let maps: Vec<DenseMatrix> = spec
        .modalities
        .iter()
        .map(|m| match m.distortion {
            Distortion::Identity => DenseMatrix::identity(spec.latent_dim),
            Distortion::RandomOrthonormal => orthonormal_map(spec.latent_dim, m.dim, &mut rng),
        })
        .collect();
    let mut prototypes = |n: usize| -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..spec.latent_dim).map(|_| spec.prototype_scale * gaussian(&mut rng)).collect())
            .collect()
    };
    let target_protos = prototypes(spec.num_classes);
    let source_protos = prototypes(spec.source_classes);

    let mut modalities = Vec::with_capacity(spec.modalities.len());
    for (m, map) in spec.modalities.iter().zip(&maps) {
        let mut set = ModalitySet::new(m.tag.clone(), m.dim);
        for (c, proto) in target_protos.iter().enumerate() {
            for j in 0..spec.per_class {
                set.instances.push(Instance {
                    id: (c * spec.per_class + j) as u64,
                    features: observe(proto, map, m.noise, &mut rng),
                    label: Some(c),
                });
            }
        }
        modalities.push(set);
    }
    let pair_table = spec.paired.then(|| {
        (0..spec.num_classes * spec.per_class)
            .map(|id| vec![id as u64; spec.modalities.len()])
            .collect()
    });
    let target = Dataset {
        num_classes: spec.num_classes,
        modalities,
        pair_table,
    };

    let image = &spec.modalities[0];
    let mut src = ModalitySet::new(image.tag.clone(), image.dim);
    for (c, proto) in source_protos.iter().enumerate() {
        for j in 0..spec.source_per_class {
            src.instances.push(Instance {
                id: (c * spec.source_per_class + j) as u64,
                features: observe(proto, &maps[0], image.noise, &mut rng),
                label: Some(c),
            });
        }
    }
    let source = Dataset {
        num_classes: spec.source_classes,
        modalities: vec![src],
        pair_table: None,
    };
    Ok((source, target))
}
