//! The five training losses and the gradient reversal layer.
//!
//! Each builder records its computation on a [`Tape`] and returns a scalar
//! node, so every term gets its gradient from the same reverse sweep.
//!
//! | term | meaning                                        | reduction              |
//! |------|------------------------------------------------|------------------------|
//! | ST   | MMD² between source and target image layers    | sum over layers        |
//! | SDS  | softmax loss on labeled source images          | mean over source batch |
//! | CT   | squared distance image ↔ other modality        | sum over pairs/layers  |
//! | SC   | softmax loss of the shared classifier          | sum over modalities / N|
//! | MC   | sigmoid cross entropy of the modality critic   | sum over instances / N |

pub mod kernel;

use serde::{Deserialize, Serialize};

use crate::autodiff::{DenseMatrix, Tape, Var};
use crate::error::{Error, Result};
pub use kernel::KernelSpec;

/// How MMD bandwidths are picked for each batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum KernelChoice {
    /// `{σ/2, σ, 2σ}` from the median pairwise distance of the joined batch.
    /// The bandwidths are treated as constants by the backward pass.
    MedianHeuristic,
    Fixed(KernelSpec),
}

impl Default for KernelChoice {
    fn default() -> Self {
        KernelChoice::MedianHeuristic
    }
}

impl KernelChoice {
    pub fn resolve(&self, a: &DenseMatrix, b: &DenseMatrix) -> KernelSpec {
        match self {
            KernelChoice::MedianHeuristic => KernelSpec::median_heuristic(a, b),
            KernelChoice::Fixed(spec) => spec.clone(),
        }
    }
}

/// Weights of the combined objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub st: f64,
    pub sds: f64,
    pub ct: f64,
    pub sc: f64,
    /// Gradient reversal factor applied in front of the modality discriminator.
    pub lambda: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            st: 1.0,
            sds: 1.0,
            ct: 0.001,
            sc: 1.0,
            lambda: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.st, self.sds, self.ct, self.sc, self.lambda];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config(format!(
                "loss weights must be finite and non-negative: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Scalar loss nodes recorded for one batch. Absent terms were disabled.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossTerms {
    pub st: Option<Var>,
    pub sds: Option<Var>,
    pub ct: Option<Var>,
    pub sc: Option<Var>,
    /// Must be computed from discriminator outputs fed through
    /// [`gradient_reversal`] with the configured `lambda`.
    pub mc: Option<Var>,
}

/// Loss values of one batch together with the weights used to combine them.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBundle {
    pub st: f64,
    pub sds: f64,
    pub ct: f64,
    pub sc: f64,
    pub mc: f64,
    pub weights: LossWeights,
}

impl LossBundle {
    pub fn from_terms(tape: &Tape, terms: &LossTerms, weights: LossWeights) -> Self {
        let read = |v: Option<Var>| v.and_then(|v| tape.scalar(v)).unwrap_or(0.0);
        Self {
            st: read(terms.st),
            sds: read(terms.sds),
            ct: read(terms.ct),
            sc: read(terms.sc),
            mc: read(terms.mc),
            weights,
        }
    }

    /// The objective the generator minimizes: weighted terms minus `λ·MC`.
    pub fn generator_objective(&self) -> f64 {
        let w = &self.weights;
        w.st * self.st + w.sds * self.sds + w.ct * self.ct + w.sc * self.sc - w.lambda * self.mc
    }

    /// Name of the first non-finite term, if any.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        [
            ("ST", self.st),
            ("SDS", self.sds),
            ("CT", self.ct),
            ("SC", self.sc),
            ("MC", self.mc),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(name, _)| name)
    }
}

/// Biased squared MMD between the row sets of `a` and `b`.
pub fn mmd_squared(tape: &mut Tape, a: Var, b: Var, kernel: &KernelSpec) -> Result<Var> {
    tape.mmd(a, b, kernel)
}

/// MMD² summed over corresponding layer pairs.
pub fn single_modal_transfer_loss(
    tape: &mut Tape,
    src_layers: &[Var],
    tgt_layers: &[Var],
    kernel: &KernelChoice,
) -> Result<Var> {
    if src_layers.len() != tgt_layers.len() || src_layers.is_empty() {
        return Err(Error::Config(format!(
            "transfer layers: {} source vs {} target",
            src_layers.len(),
            tgt_layers.len()
        )));
    }
    let mut terms = Vec::with_capacity(src_layers.len());
    for (&s, &t) in src_layers.iter().zip(tgt_layers) {
        let spec = kernel.resolve(tape.value(s), tape.value(t));
        terms.push(tape.mmd(s, t, &spec)?);
    }
    Ok(tape.add_all(&terms)?.expect("non-empty"))
}

/// Mean softmax loss `−(1/n)·Σ log p̂(y_i | z_i)`.
pub fn softmax_supervision_loss(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    if labels.is_empty() {
        return Err(Error::Config("softmax loss over an empty batch".into()));
    }
    let total = tape.softmax_xent_sum(logits, labels)?;
    Ok(tape.scale(total, 1.0 / labels.len() as f64))
}

/// Summed squared Euclidean distance between aligned rows.
pub fn pairwise_discrepancy(tape: &mut Tape, z_img: Var, z_other: Var) -> Result<Var> {
    let diff = tape.sub(z_img, z_other)?;
    Ok(tape.sum_squares(diff))
}

/// `Σ_X Σ_l Σ_j ‖a^I_{l,j} − a^X_{l,j}‖²`.
///
/// `image[l]` holds the image activations of transfer layer `l`; `others[x][l]`
/// the row-aligned activations of non-image modality `x` at the same layer.
pub fn cross_modal_transfer_loss(
    tape: &mut Tape,
    image: &[Var],
    others: &[Vec<Var>],
) -> Result<Var> {
    if image.is_empty() || others.is_empty() {
        return Err(Error::Config(
            "cross-modal transfer needs the image and at least one other modality".into(),
        ));
    }
    let mut terms = Vec::new();
    for (x, layers) in others.iter().enumerate() {
        if layers.len() != image.len() {
            return Err(Error::Config(format!(
                "modality #{x} has {} transfer layers, image has {}",
                layers.len(),
                image.len()
            )));
        }
        for (&img, &other) in image.iter().zip(layers) {
            terms.push(pairwise_discrepancy(tape, img, other)?);
        }
    }
    Ok(tape.add_all(&terms)?.expect("non-empty"))
}

/// `−(1/N)·Σ_X Σ_j log p̂(y_j | z^X_j)` with `N` the number of documents.
///
/// `labels[x]` are the labels of modality `x`'s rows; a document carries a
/// single label so they must agree across modalities.
pub fn semantic_consistency_loss(
    tape: &mut Tape,
    logits: &[Var],
    labels: &[Vec<usize>],
) -> Result<Var> {
    if logits.is_empty() || logits.len() != labels.len() {
        return Err(Error::Config(format!(
            "semantic consistency: {} logit blocks for {} label lists",
            logits.len(),
            labels.len()
        )));
    }
    let reference = &labels[0];
    if reference.is_empty() {
        return Err(Error::Config("semantic consistency over an empty batch".into()));
    }
    if let Some(x) = labels.iter().position(|l| l != reference) {
        return Err(Error::Data(format!(
            "document labels disagree between modality #0 and modality #{x}"
        )));
    }
    let mut terms = Vec::with_capacity(logits.len());
    for &z in logits {
        terms.push(tape.softmax_xent_sum(z, reference)?);
    }
    let total = tape.add_all(&terms)?.expect("non-empty");
    Ok(tape.scale(total, 1.0 / reference.len() as f64))
}

/// One-hot modality indicator rows.
pub fn modality_onehots(modality_of_row: &[usize], num_modalities: usize) -> DenseMatrix {
    let mut m = DenseMatrix::zeros(modality_of_row.len(), num_modalities);
    for (r, &x) in modality_of_row.iter().enumerate() {
        m.set(r, x, 1.0);
    }
    m
}

/// `−(1/N)·Σ_rows Σ_units [p·log σ(o) + (1−p)·log(1−σ(o))]`.
pub fn modal_adversarial_loss(
    tape: &mut Tape,
    outputs: Var,
    onehots: &DenseMatrix,
    n_documents: usize,
) -> Result<Var> {
    if n_documents == 0 {
        return Err(Error::Config("modal adversarial loss with zero documents".into()));
    }
    for r in 0..onehots.rows() {
        let row = onehots.row(r);
        let ones = row.iter().filter(|&&v| v == 1.0).count();
        let zeros = row.iter().filter(|&&v| v == 0.0).count();
        if ones != 1 || ones + zeros != row.len() {
            return Err(Error::Config(format!(
                "modality indicator row {r} is not one-hot: {row:?}"
            )));
        }
    }
    let total = tape.sigmoid_xent_sum(outputs, onehots.clone())?;
    Ok(tape.scale(total, 1.0 / n_documents as f64))
}

/// Identity forward, `−λ` times the incoming gradient backward.
pub fn gradient_reversal(tape: &mut Tape, input: Var, lambda: f64) -> Result<Var> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Config(format!("lambda must be non-negative, got {lambda}")));
    }
    Ok(tape.grad_reverse(input, lambda))
}

/// `w_st·ST + w_sds·SDS + w_ct·CT + w_sc·SC + MC`.
///
/// MC enters with unit weight; the reversal layer in front of the
/// discriminator turns its contribution into `−λ·∂MC` for everything
/// upstream. Zero-weight terms are left off the graph entirely.
pub fn total_objective(tape: &mut Tape, terms: &LossTerms, weights: &LossWeights) -> Result<Var> {
    weights.validate()?;
    let mut parts = Vec::new();
    for (term, w) in [
        (terms.st, weights.st),
        (terms.sds, weights.sds),
        (terms.ct, weights.ct),
        (terms.sc, weights.sc),
    ] {
        if let Some(v) = term {
            if w != 0.0 {
                parts.push(if w == 1.0 { v } else { tape.scale(v, w) });
            }
        }
    }
    if let Some(mc) = terms.mc {
        parts.push(mc);
    }
    match tape.add_all(&parts)? {
        Some(v) => Ok(v),
        None => Ok(tape.constant(DenseMatrix::scalar(0.0))),
    }
}
