use rand::Rng;

use super::matrix::DenseMatrix;
use crate::error::{Error, Result};

/// A named set of trainable matrices sharing one learning rate and decay.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGroup {
    pub name: String,
    pub matrices: Vec<DenseMatrix>,
    /// Per-matrix labels such as `fc6.weight`, parallel to `matrices`.
    pub labels: Vec<String>,
    pub learning_rate: f64,
    pub weight_decay: f64,
}

impl ParamGroup {
    pub fn new(name: impl Into<String>, learning_rate: f64, weight_decay: f64) -> Result<Self> {
        let name = name.into();
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "group {name}: learning rate must be positive, got {learning_rate}"
            )));
        }
        if !(weight_decay >= 0.0 && weight_decay.is_finite()) {
            return Err(Error::Config(format!(
                "group {name}: weight decay must be non-negative, got {weight_decay}"
            )));
        }
        Ok(Self {
            name,
            matrices: Vec::new(),
            labels: Vec::new(),
            learning_rate,
            weight_decay,
        })
    }

    /// Appends a matrix and returns its index within the group.
    pub fn push(&mut self, label: impl Into<String>, matrix: DenseMatrix) -> usize {
        self.matrices.push(matrix);
        self.labels.push(label.into());
        self.matrices.len() - 1
    }

    pub fn num_values(&self) -> usize {
        self.matrices.iter().map(DenseMatrix::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }
}

/// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> DenseMatrix {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let values = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-limit..=limit))
        .collect();
    DenseMatrix::from_raw(fan_in, fan_out, values)
}

/// `θ ← θ − μ·(grad + weight_decay·θ)` with `μ = learning_rate × lr_scale`.
pub fn sgd_step(group: &mut ParamGroup, gradients: &[DenseMatrix], lr_scale: f64) -> Result<()> {
    if gradients.len() != group.matrices.len() {
        return Err(Error::Usage(format!(
            "group {}: {} gradients for {} matrices",
            group.name,
            gradients.len(),
            group.matrices.len()
        )));
    }
    for (m, g) in group.matrices.iter().zip(gradients) {
        if m.shape() != g.shape() {
            return Err(Error::Shape {
                op: "sgd_step",
                left: m.shape(),
                right: g.shape(),
            });
        }
    }
    let mu = group.learning_rate * lr_scale;
    let decay = group.weight_decay;
    for (m, g) in group.matrices.iter_mut().zip(gradients) {
        for (theta, &grad) in m.values_mut().iter_mut().zip(g.values()) {
            *theta -= mu * (grad + decay * *theta);
        }
        if !m.is_finite() {
            return Err(Error::Numeric(format!(
                "group {}: parameters became non-finite",
                group.name
            )));
        }
    }
    Ok(())
}
