//! Multi-bandwidth Gaussian kernels and the biased squared MMD estimator.

use serde::{Deserialize, Serialize};

use crate::autodiff::DenseMatrix;
use crate::error::{Error, Result};

/// Mixture of Gaussian kernels `k(x, y) = Σ w_i exp(-‖x−y‖² / (2σ_i²))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub bandwidths: Vec<f64>,
    pub weights: Vec<f64>,
}

impl KernelSpec {
    pub fn gaussian(sigma: f64) -> Result<Self> {
        Self::new(vec![sigma], vec![1.0])
    }

    /// Equal-weight mixture over `bandwidths`.
    pub fn uniform(bandwidths: Vec<f64>) -> Result<Self> {
        let n = bandwidths.len().max(1);
        Self::new(bandwidths, vec![1.0 / n as f64; n])
    }

    pub fn new(bandwidths: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if bandwidths.is_empty() {
            return Err(Error::Config("kernel needs at least one bandwidth".into()));
        }
        if bandwidths.len() != weights.len() {
            return Err(Error::Config(format!(
                "kernel has {} bandwidths but {} weights",
                bandwidths.len(),
                weights.len()
            )));
        }
        if let Some(bad) = bandwidths.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(Error::Config(format!("kernel bandwidth must be positive, got {bad}")));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "kernel weights must be non-negative and sum to 1, got {weights:?}"
            )));
        }
        Ok(Self { bandwidths, weights })
    }

    /// `{σ/2, σ, 2σ}` around the median pairwise distance of the joined rows
    /// of `a` and `b`. Falls back to `σ = 1` when every row coincides.
    pub fn median_heuristic(a: &DenseMatrix, b: &DenseMatrix) -> Self {
        let joined: Vec<&[f64]> = (0..a.rows())
            .map(|i| a.row(i))
            .chain((0..b.rows()).map(|i| b.row(i)))
            .collect();
        let mut dists = Vec::with_capacity(joined.len() * joined.len().saturating_sub(1) / 2);
        for i in 0..joined.len() {
            for j in i + 1..joined.len() {
                dists.push(sq_dist(joined[i], joined[j]).sqrt());
            }
        }
        let median = median(&mut dists);
        let sigma = if median > 0.0 && median.is_finite() { median } else { 1.0 };
        Self {
            bandwidths: vec![sigma / 2.0, sigma, 2.0 * sigma],
            weights: vec![1.0 / 3.0; 3],
        }
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        let d2 = sq_dist(x, y);
        self.eval_sq(d2)
    }

    fn eval_sq(&self, d2: f64) -> f64 {
        self.bandwidths
            .iter()
            .zip(&self.weights)
            .map(|(s, w)| w * (-d2 / (2.0 * s * s)).exp())
            .sum()
    }

    /// `k(x, y)` and the scalar `c` such that `∂k/∂x = c · (x − y)`.
    fn eval_with_slope(&self, d2: f64) -> (f64, f64) {
        let mut k = 0.0;
        let mut slope = 0.0;
        for (s, w) in self.bandwidths.iter().zip(&self.weights) {
            let s2 = s * s;
            let kv = w * (-d2 / (2.0 * s2)).exp();
            k += kv;
            slope -= kv / s2;
        }
        (k, slope)
    }
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

#[inline]
pub(crate) fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

fn check_sets(a: &DenseMatrix, b: &DenseMatrix) -> Result<()> {
    if a.rows() == 0 || b.rows() == 0 {
        return Err(Error::Config(format!(
            "mmd needs non-empty sample sets, got {} and {} rows",
            a.rows(),
            b.rows()
        )));
    }
    if a.cols() != b.cols() {
        return Err(Error::Shape {
            op: "mmd",
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(())
}

fn mean_kernel(x: &DenseMatrix, y: &DenseMatrix, kernel: &KernelSpec) -> f64 {
    let mut total = 0.0;
    for i in 0..x.rows() {
        for j in 0..y.rows() {
            total += kernel.eval(x.row(i), y.row(j));
        }
    }
    total / (x.rows() * y.rows()) as f64
}

/// `mean(K_aa) + mean(K_bb) − 2·mean(K_ab)`.
pub fn mmd_squared_value(a: &DenseMatrix, b: &DenseMatrix, kernel: &KernelSpec) -> Result<f64> {
    check_sets(a, b)?;
    Ok(mean_kernel(a, a, kernel) + mean_kernel(b, b, kernel) - 2.0 * mean_kernel(a, b, kernel))
}

/// Gradients of [`mmd_squared_value`] with respect to every row of `a` and `b`.
pub(crate) fn mmd_squared_grad(
    a: &DenseMatrix,
    b: &DenseMatrix,
    kernel: &KernelSpec,
) -> (DenseMatrix, DenseMatrix) {
    let (na, nb) = (a.rows() as f64, b.rows() as f64);
    let mut ga = DenseMatrix::zeros(a.rows(), a.cols());
    let mut gb = DenseMatrix::zeros(b.rows(), b.cols());

    // within-set terms: each unordered pair contributes through both indices
    within_set_grad(a, kernel, 2.0 / (na * na), &mut ga);
    within_set_grad(b, kernel, 2.0 / (nb * nb), &mut gb);

    let cross = -2.0 / (na * nb);
    for i in 0..a.rows() {
        for j in 0..b.rows() {
            let (x, y) = (a.row(i), b.row(j));
            let (_, slope) = kernel.eval_with_slope(sq_dist(x, y));
            let c = cross * slope;
            for d in 0..a.cols() {
                let diff = x[d] - y[d];
                ga.values_mut()[i * a.cols() + d] += c * diff;
                gb.values_mut()[j * b.cols() + d] -= c * diff;
            }
        }
    }
    (ga, gb)
}

fn within_set_grad(x: &DenseMatrix, kernel: &KernelSpec, coeff: f64, out: &mut DenseMatrix) {
    let cols = x.cols();
    for i in 0..x.rows() {
        for j in 0..x.rows() {
            if i == j {
                continue;
            }
            let (xi, xj) = (x.row(i), x.row(j));
            let (_, slope) = kernel.eval_with_slope(sq_dist(xi, xj));
            let c = coeff * slope;
            for d in 0..cols {
                out.values_mut()[i * cols + d] += c * (xi[d] - xj[d]);
            }
        }
    }
}
