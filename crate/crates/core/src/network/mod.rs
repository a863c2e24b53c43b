//! The star-shaped multi-pathway network.
//!
//! ```text
//!  source feats ─ fc6-S ─ fc7-S ─ fc8-S            (θ_S)
//!                   ┆ MMD   ┆ MMD
//!  image feats  ─ fc6-I ─ fc7-I ─┐                 (θ_I)
//!                   ┆ L2    ┆ L2 │
//!  text feats   ─ fc6-T ─ fc7-T ─┼─ fc8 ─ fc9 ─ fc10 ─ softmax     (θ_C)
//!  ...                           │          └─ grl ─ fc11 ─ fc12 ─ fc13 (θ_M)
//! ```

mod checkpoint;
mod config;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{
    checkpoint_digest, load_checkpoint, read_checkpoint, restore, save_checkpoint, write_checkpoint, CheckpointData,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::{
    Ablation, NetworkConfig, PathwaySpec, DEFAULT_COMMON_WIDTHS, DEFAULT_DISCRIMINATOR_LEARNING_RATE,
    DEFAULT_DISCRIMINATOR_WIDTHS, DEFAULT_LEARNING_RATE, DEFAULT_SPECIFIC_WIDTHS, DEFAULT_WEIGHT_DECAY,
};

use crate::autodiff::{glorot_uniform, DenseMatrix, Gradients, ParamGroup, ParamId, Tape, Var};
use crate::error::{Error, Result};
use crate::losses::{self, LossTerms};

/// A stack of fully-connected layers stored in one parameter group as
/// `[w0, b0, w1, b1, ...]`.
#[derive(Debug, Clone, PartialEq)]
struct Mlp {
    group: usize,
    first: usize,
    layers: usize,
    /// ReLU after the final layer as well.
    relu_last: bool,
}

impl Mlp {
    fn push(
        group_idx: usize,
        group: &mut ParamGroup,
        prefix: &str,
        first_layer_no: usize,
        input: usize,
        widths: &[usize],
        relu_last: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let first = group.matrices.len();
        let mut fan_in = input;
        for (i, &w) in widths.iter().enumerate() {
            let name = format!("{prefix}{}", first_layer_no + i);
            group.push(format!("{name}.weight"), glorot_uniform(fan_in, w, rng));
            group.push(format!("{name}.bias"), DenseMatrix::zeros(1, w));
            fan_in = w;
        }
        Self {
            group: group_idx,
            first,
            layers: widths.len(),
            relu_last,
        }
    }

    /// Runs the stack, returning every layer's output.
    fn forward(&self, tape: &mut Tape, groups: &[ParamGroup], x: Var) -> Result<Vec<Var>> {
        let mut outs = Vec::with_capacity(self.layers);
        let mut h = x;
        for l in 0..self.layers {
            let wi = self.first + 2 * l;
            let w = tape.param(ParamId::new(self.group, wi), &groups[self.group].matrices[wi]);
            let b = tape.param(ParamId::new(self.group, wi + 1), &groups[self.group].matrices[wi + 1]);
            h = tape.affine(h, w, b)?;
            if l + 1 < self.layers || self.relu_last {
                h = tape.relu(h);
            }
            outs.push(h);
        }
        Ok(outs)
    }

    fn last(&self, tape: &mut Tape, groups: &[ParamGroup], x: Var) -> Result<Var> {
        Ok(*self.forward(tape, groups, x)?.last().expect("mlp has layers"))
    }
}

/// Head that turns specific representations into class logits.
#[derive(Debug, Clone, PartialEq)]
enum Head {
    /// Shared common layers followed by the shared classifier.
    Shared { common: Mlp, classifier: Mlp },
    /// One classifier per modality directly on its specific representation.
    PerModality(Vec<Mlp>),
}

/// Indices of the parameter groups, in storage order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupLayout {
    pub source: Option<usize>,
    pub pathways: Vec<usize>,
    pub common: usize,
    pub discriminator: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StarNetwork {
    config: NetworkConfig,
    groups: Vec<ParamGroup>,
    layout: GroupLayout,
    source_path: Option<Mlp>,
    source_classifier: Option<Mlp>,
    pathways: Vec<Mlp>,
    head: Head,
    discriminator: Option<Mlp>,
}

/// Row-aligned target documents: `features[m]` holds one row per document
/// for modality `m` in configuration order.
#[derive(Debug, Clone)]
pub struct DocumentBatch {
    pub features: Vec<DenseMatrix>,
    pub labels: Vec<usize>,
}

impl DocumentBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Labeled source-domain images.
#[derive(Debug, Clone)]
pub struct SourceBatch {
    pub features: DenseMatrix,
    pub labels: Vec<usize>,
}

/// Tape handles for every activation the losses consume.
#[derive(Debug, Clone)]
pub struct ActivationSet {
    /// `specific[m][l]`: post-ReLU output of specific layer `l` for modality `m`.
    pub specific: Vec<Vec<Var>>,
    pub source_specific: Option<Vec<Var>>,
    pub source_logits: Option<Var>,
    /// Per-modality common representation (last common layer output).
    pub common: Vec<Var>,
    /// All modalities' common representations stacked in modality order.
    pub common_stacked: Option<Var>,
    /// Classifier logits per modality.
    pub logits: Vec<Var>,
    /// Discriminator outputs for `common_stacked`, behind the reversal layer.
    pub discriminator: Option<Var>,
    pub documents: usize,
}

impl StarNetwork {
    pub fn build(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let decay = config.weight_decay;
        let mut groups = Vec::new();

        let mut pathways = Vec::with_capacity(config.pathways.len());
        let mut pathway_groups = Vec::with_capacity(config.pathways.len());
        let offset = usize::from(config.source_enabled());
        for (m, spec) in config.pathways.iter().enumerate() {
            let gi = offset + m;
            let mut g = ParamGroup::new(format!("pathway/{}", spec.modality), spec.learning_rate, decay)?;
            pathways.push(Mlp::push(gi, &mut g, "fc", 6, spec.input_dim, &spec.layer_widths, true, &mut rng));
            pathway_groups.push(g);
        }

        let (source_group, source_path, source_classifier) = if config.source_enabled() {
            // the source pathway starts as an exact copy of the image pathway
            let mut g = ParamGroup::new("source", config.source_learning_rate, decay)?;
            let img = &pathway_groups[0];
            for (label, m) in img.labels.iter().zip(&img.matrices) {
                g.push(label.clone(), m.clone());
            }
            let path = Mlp {
                group: 0,
                ..pathways[0].clone()
            };
            let classifier = if config.sds_enabled() {
                let depth = config.image().layer_widths.len();
                Some(Mlp::push(
                    0,
                    &mut g,
                    "fc",
                    6 + depth,
                    config.image().output_width(),
                    &[config.num_classes_source],
                    false,
                    &mut rng,
                ))
            } else {
                None
            };
            for label in &mut g.labels {
                *label = label.replacen('.', "-S.", 1);
            }
            (Some(g), Some(path), classifier)
        } else {
            (None, None, None)
        };

        let mut layout = GroupLayout {
            source: None,
            pathways: Vec::new(),
            common: 0,
            discriminator: None,
        };
        if let Some(g) = source_group {
            layout.source = Some(groups.len());
            groups.push(g);
        }
        for g in pathway_groups {
            layout.pathways.push(groups.len());
            groups.push(g);
        }

        layout.common = groups.len();
        let mut common = ParamGroup::new("common", config.common_learning_rate, decay)?;
        let head = if config.ablation.no_sl_net {
            let heads = config
                .pathways
                .iter()
                .map(|p| {
                    Mlp::push(
                        layout.common,
                        &mut common,
                        &format!("{}/fc", p.modality),
                        10,
                        p.output_width(),
                        &[config.num_classes_target],
                        false,
                        &mut rng,
                    )
                })
                .collect();
            Head::PerModality(heads)
        } else {
            let w = config.image().output_width();
            let shared = Mlp::push(layout.common, &mut common, "fc", 8, w, &config.common_widths, true, &mut rng);
            let classifier = Mlp::push(
                layout.common,
                &mut common,
                "fc",
                8 + config.common_widths.len(),
                *config.common_widths.last().expect("validated"),
                &[config.num_classes_target],
                false,
                &mut rng,
            );
            Head::Shared {
                common: shared,
                classifier,
            }
        };
        groups.push(common);

        let discriminator = if config.adversarial_enabled() {
            let gi = groups.len();
            layout.discriminator = Some(gi);
            let mut g = ParamGroup::new("discriminator", config.discriminator_learning_rate, decay)?;
            let mut widths = config.discriminator_widths.clone();
            widths.push(config.pathways.len());
            let first_no = 8 + config.common_widths.len() + 1;
            let mlp = Mlp::push(
                gi,
                &mut g,
                "fc",
                first_no,
                *config.common_widths.last().expect("validated"),
                &widths,
                false,
                &mut rng,
            );
            groups.push(g);
            Some(mlp)
        } else {
            None
        };

        Ok(Self {
            config,
            groups,
            layout,
            source_path,
            source_classifier,
            pathways,
            head,
            discriminator,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn groups(&self) -> &[ParamGroup] {
        &self.groups
    }

    pub fn groups_mut(&mut self) -> &mut [ParamGroup] {
        &mut self.groups
    }

    pub fn layout(&self) -> &GroupLayout {
        &self.layout
    }

    pub fn group_index(&self, name: &str) -> Option<usize> {
        self.groups.iter().position(|g| g.name == name)
    }

    pub fn num_modalities(&self) -> usize {
        self.config.pathways.len()
    }

    fn check_input(&self, modality: usize, x: &DenseMatrix) -> Result<()> {
        let spec = &self.config.pathways[modality];
        if x.cols() != spec.input_dim {
            return Err(Error::Shape {
                op: "pathway input",
                left: x.shape(),
                right: (x.rows(), spec.input_dim),
            });
        }
        Ok(())
    }

    fn modality_logits(&self, tape: &mut Tape, modality: usize, specific: Var) -> Result<(Option<Var>, Var)> {
        match &self.head {
            Head::Shared { common, classifier } => {
                let z = common.last(tape, &self.groups, specific)?;
                let logits = classifier.last(tape, &self.groups, z)?;
                Ok((Some(z), logits))
            }
            Head::PerModality(heads) => {
                let logits = heads[modality].last(tape, &self.groups, specific)?;
                Ok((None, logits))
            }
        }
    }

    /// Records the full training forward pass for one batch.
    pub fn forward_document_batch(
        &self,
        tape: &mut Tape,
        docs: &DocumentBatch,
        src: Option<&SourceBatch>,
    ) -> Result<ActivationSet> {
        let n_mod = self.num_modalities();
        if docs.features.len() != n_mod {
            return Err(Error::Data(format!(
                "document batch has {} modalities, network expects {n_mod} ({:?})",
                docs.features.len(),
                self.config.modalities()
            )));
        }
        if docs.is_empty() {
            return Err(Error::Data("empty document batch".into()));
        }
        for (m, x) in docs.features.iter().enumerate() {
            self.check_input(m, x)?;
            if x.rows() != docs.len() {
                return Err(Error::Data(format!(
                    "modality {} has {} rows for {} documents",
                    self.config.pathways[m].modality,
                    x.rows(),
                    docs.len()
                )));
            }
        }

        let mut specific = Vec::with_capacity(n_mod);
        let mut common = Vec::new();
        let mut logits = Vec::with_capacity(n_mod);
        for (m, x) in docs.features.iter().enumerate() {
            let input = tape.constant(x.clone());
            let layers = self.pathways[m].forward(tape, &self.groups, input)?;
            let (z, l) = self.modality_logits(tape, m, *layers.last().expect("non-empty"))?;
            specific.push(layers);
            if let Some(z) = z {
                common.push(z);
            }
            logits.push(l);
        }

        let (source_specific, source_logits) = match (&self.source_path, src) {
            (Some(path), Some(batch)) => {
                self.check_input(0, &batch.features)?;
                if batch.labels.is_empty() || batch.labels.len() != batch.features.rows() {
                    return Err(Error::Data("source batch is empty or mislabeled".into()));
                }
                let input = tape.constant(batch.features.clone());
                let layers = path.forward(tape, &self.groups, input)?;
                let logits = match &self.source_classifier {
                    Some(c) => Some(c.last(tape, &self.groups, *layers.last().expect("non-empty"))?),
                    None => None,
                };
                (Some(layers), logits)
            }
            (Some(_), None) => {
                return Err(Error::Data("source pathway is enabled but no source batch was given".into()))
            }
            (None, _) => (None, None),
        };

        let common_stacked = if common.is_empty() {
            None
        } else {
            Some(tape.concat_rows(&common)?)
        };
        let discriminator = match (&self.discriminator, common_stacked) {
            (Some(d), Some(z)) => {
                let reversed = losses::gradient_reversal(tape, z, self.config.weights.lambda)?;
                Some(d.last(tape, &self.groups, reversed)?)
            }
            _ => None,
        };

        Ok(ActivationSet {
            specific,
            source_specific,
            source_logits,
            common,
            common_stacked,
            logits,
            discriminator,
            documents: docs.len(),
        })
    }

    /// Records each enabled loss term on `tape`.
    pub fn loss_terms(
        &self,
        tape: &mut Tape,
        acts: &ActivationSet,
        docs: &DocumentBatch,
        src: Option<&SourceBatch>,
    ) -> Result<LossTerms> {
        let transfer = self.config.resolved_transfer_layers();
        let mut terms = LossTerms::default();

        if let (Some(src_layers), Some(_)) = (&acts.source_specific, src) {
            let s: Vec<Var> = transfer.iter().map(|&l| src_layers[l]).collect();
            let t: Vec<Var> = transfer.iter().map(|&l| acts.specific[0][l]).collect();
            terms.st = Some(losses::single_modal_transfer_loss(tape, &s, &t, &self.config.kernel)?);
        }
        if let (Some(logits), Some(batch)) = (acts.source_logits, src) {
            terms.sds = Some(losses::softmax_supervision_loss(tape, logits, &batch.labels)?);
        }
        if acts.specific.len() > 1 {
            let image: Vec<Var> = transfer.iter().map(|&l| acts.specific[0][l]).collect();
            let others: Vec<Vec<Var>> = acts.specific[1..]
                .iter()
                .map(|layers| transfer.iter().map(|&l| layers[l]).collect())
                .collect();
            terms.ct = Some(losses::cross_modal_transfer_loss(tape, &image, &others)?);
        }
        let labels = vec![docs.labels.clone(); acts.logits.len()];
        terms.sc = Some(losses::semantic_consistency_loss(tape, &acts.logits, &labels)?);
        if let Some(out) = acts.discriminator {
            let rows: Vec<usize> = (0..self.num_modalities())
                .flat_map(|m| std::iter::repeat(m).take(acts.documents))
                .collect();
            let onehots = losses::modality_onehots(&rows, self.num_modalities());
            terms.mc = Some(losses::modal_adversarial_loss(tape, out, &onehots, acts.documents)?);
        }
        Ok(terms)
    }

    /// Forward, losses and the combined objective on a fresh tape.
    pub fn objective(
        &self,
        docs: &DocumentBatch,
        src: Option<&SourceBatch>,
    ) -> Result<(Tape, LossTerms, Var)> {
        let mut tape = Tape::new();
        let acts = self.forward_document_batch(&mut tape, docs, src)?;
        let terms = self.loss_terms(&mut tape, &acts, docs, src)?;
        let root = losses::total_objective(&mut tape, &terms, &self.config.weights)?;
        Ok((tape, terms, root))
    }

    /// Per-group gradients, zero-filled for matrices the root did not reach.
    pub fn group_gradients(&self, grads: &Gradients) -> Vec<Vec<DenseMatrix>> {
        self.groups
            .iter()
            .enumerate()
            .map(|(gi, g)| {
                g.matrices
                    .iter()
                    .enumerate()
                    .map(|(mi, m)| grads.param_or_zeros(ParamId::new(gi, mi), m.shape()))
                    .collect()
            })
            .collect()
    }

    fn modality_index(&self, modality: &str) -> Result<usize> {
        self.config
            .modality_index(modality)
            .ok_or_else(|| Error::Config(format!("unknown modality {modality:?}; known: {:?}", self.config.modalities())))
    }

    /// Last specific-layer output for rows of `modality`.
    pub fn specific_representation(&self, modality: &str, features: &DenseMatrix) -> Result<DenseMatrix> {
        let m = self.modality_index(modality)?;
        self.check_input(m, features)?;
        let mut tape = Tape::new();
        let x = tape.constant(features.clone());
        let out = self.pathways[m].last(&mut tape, &self.groups, x)?;
        Ok(tape.value(out).clone())
    }

    /// Output of the last shared common layer, the discriminator's input.
    pub fn common_representation(&self, modality: &str, features: &DenseMatrix) -> Result<DenseMatrix> {
        let m = self.modality_index(modality)?;
        self.check_input(m, features)?;
        let Head::Shared { common, .. } = &self.head else {
            return Err(Error::Usage("network has no shared common layers".into()));
        };
        let mut tape = Tape::new();
        let x = tape.constant(features.clone());
        let s = self.pathways[m].last(&mut tape, &self.groups, x)?;
        let z = common.last(&mut tape, &self.groups, s)?;
        Ok(tape.value(z).clone())
    }

    /// Raw discriminator outputs for given common representations.
    pub fn discriminate(&self, common: &DenseMatrix) -> Result<DenseMatrix> {
        let Some(d) = &self.discriminator else {
            return Err(Error::Usage("network has no modality discriminator".into()));
        };
        let mut tape = Tape::new();
        let x = tape.constant(common.clone());
        let out = d.last(&mut tape, &self.groups, x)?;
        Ok(tape.value(out).clone())
    }

    /// Classifier logits for rows of one modality.
    pub fn logits(&self, modality: &str, features: &DenseMatrix) -> Result<DenseMatrix> {
        let m = self.modality_index(modality)?;
        self.check_input(m, features)?;
        let mut tape = Tape::new();
        let x = tape.constant(features.clone());
        let s = self.pathways[m].last(&mut tape, &self.groups, x)?;
        let (_, l) = self.modality_logits(&mut tape, m, s)?;
        Ok(tape.value(l).clone())
    }

    /// Class-probability common representation, one row per input row.
    pub fn embed(&self, modality: &str, features: &DenseMatrix) -> Result<DenseMatrix> {
        let logits = self.logits(modality, features)?;
        Ok(softmax_rows(&logits))
    }

    /// Replaces every parameter matrix; shapes and group names must match.
    pub fn set_groups(&mut self, groups: Vec<ParamGroup>) -> Result<()> {
        if groups.len() != self.groups.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter groups, got {}",
                self.groups.len(),
                groups.len()
            )));
        }
        for (have, new) in self.groups.iter().zip(&groups) {
            if have.name != new.name || have.matrices.len() != new.matrices.len() {
                return Err(Error::Checkpoint(format!(
                    "group {} does not match {}",
                    new.name, have.name
                )));
            }
            for (a, b) in have.matrices.iter().zip(&new.matrices) {
                if a.shape() != b.shape() {
                    return Err(Error::Checkpoint(format!(
                        "group {}: shape {:?} vs {:?}",
                        have.name,
                        b.shape(),
                        a.shape()
                    )));
                }
            }
        }
        for (have, new) in self.groups.iter_mut().zip(groups) {
            have.matrices = new.matrices;
        }
        Ok(())
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &DenseMatrix) -> DenseMatrix {
    let mut out = logits.clone();
    let cols = out.cols();
    for r in 0..out.rows() {
        let row = &mut out.values_mut()[r * cols..(r + 1) * cols];
        let lse = crate::autodiff::log_sum_exp(row);
        for v in row.iter_mut() {
            *v = (*v - lse).exp();
        }
        let s: f64 = row.iter().sum();
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    out
}

#[cfg(test)]
mod tests;
