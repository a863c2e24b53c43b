//! Document assembly, minibatch scheduling and the adversarial SGD loop.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{sgd_step, DenseMatrix};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::LossBundle;
use crate::network::{DocumentBatch, SourceBatch, StarNetwork};

/// An image-anchored tuple holding one instance id per modality.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrossModalDocument {
    /// Instance ids in the dataset's modality order; `members[0]` is the image.
    pub members: Vec<u64>,
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocumentPolicy {
    /// Use the dataset's explicit co-occurrence groups.
    PairTable,
    /// For each image draw one same-class instance from every other modality.
    ByLabel,
}

impl DocumentPolicy {
    pub fn for_dataset(ds: &Dataset) -> Self {
        if ds.pair_table.is_some() {
            DocumentPolicy::PairTable
        } else {
            DocumentPolicy::ByLabel
        }
    }
}

fn labeled(ds: &Dataset, modality: usize, id: u64) -> Result<usize> {
    let m = &ds.modalities[modality];
    m.find(id)
        .ok_or_else(|| Error::Data(format!("{} instance {id} not found", m.modality)))?
        .label
        .ok_or_else(|| Error::Data(format!("{} instance {id} has no label", m.modality)))
}

/// Builds the training documents, one per image instance (or pair group).
pub fn assemble_documents(tar: &Dataset, policy: DocumentPolicy, rng: &mut ChaCha8Rng) -> Result<Vec<CrossModalDocument>> {
    if tar.modalities.is_empty() {
        return Err(Error::Data("dataset has no modalities".into()));
    }
    match policy {
        DocumentPolicy::PairTable => {
            let table = tar
                .pair_table
                .as_ref()
                .ok_or_else(|| Error::Data("pair_table policy on a dataset without a pair table".into()))?;
            table
                .iter()
                .map(|row| {
                    if row.len() != tar.modalities.len() {
                        return Err(Error::Data(format!("incomplete pair group {row:?}")));
                    }
                    let label = labeled(tar, 0, row[0])?;
                    for (m, &id) in row.iter().enumerate().skip(1) {
                        let l = labeled(tar, m, id)?;
                        if l != label {
                            return Err(Error::Data(format!(
                                "pair group {row:?}: {} label {l} differs from image label {label}",
                                tar.modalities[m].modality
                            )));
                        }
                    }
                    Ok(CrossModalDocument {
                        members: row.clone(),
                        label,
                    })
                })
                .collect()
        }
        DocumentPolicy::ByLabel => {
            // ids of each class, per modality, in file order
            let by_class: Vec<Vec<Vec<u64>>> = tar
                .modalities
                .iter()
                .map(|m| {
                    let mut classes = vec![Vec::new(); tar.num_classes];
                    for inst in &m.instances {
                        if let Some(l) = inst.label {
                            classes[l].push(inst.id);
                        }
                    }
                    classes
                })
                .collect();
            let mut docs = Vec::with_capacity(tar.modalities[0].len());
            for img in &tar.modalities[0].instances {
                let label = img
                    .label
                    .ok_or_else(|| Error::Data(format!("image instance {} has no label", img.id)))?;
                let mut members = vec![img.id];
                for (m, classes) in by_class.iter().enumerate().skip(1) {
                    let id = classes[label].choose(rng).ok_or_else(|| {
                        Error::Data(format!(
                            "class {label} has no instances of modality {}",
                            tar.modalities[m].modality
                        ))
                    })?;
                    members.push(*id);
                }
                docs.push(CrossModalDocument { members, label });
            }
            Ok(docs)
        }
    }
}

/// Gathers document members into row-aligned feature matrices.
pub fn document_batch(tar: &Dataset, docs: &[CrossModalDocument]) -> Result<DocumentBatch> {
    let mut features = Vec::with_capacity(tar.modalities.len());
    for (m, set) in tar.modalities.iter().enumerate() {
        let index: std::collections::HashMap<u64, usize> =
            set.instances.iter().enumerate().map(|(i, inst)| (inst.id, i)).collect();
        let mut values = Vec::with_capacity(docs.len() * set.dim);
        for d in docs {
            let id = *d
                .members
                .get(m)
                .ok_or_else(|| Error::Data(format!("document lacks modality {}", set.modality)))?;
            let i = *index
                .get(&id)
                .ok_or_else(|| Error::Data(format!("{} instance {id} not found", set.modality)))?;
            values.extend_from_slice(&set.instances[i].features);
        }
        features.push(DenseMatrix::from_vec(docs.len(), set.dim, values)?);
    }
    Ok(DocumentBatch {
        features,
        labels: docs.iter().map(|d| d.label).collect(),
    })
}

/// Source rows at `indices` as a labeled batch.
pub fn source_batch(src: &Dataset, indices: &[usize]) -> Result<SourceBatch> {
    let set = &src.modalities[0];
    let mut values = Vec::with_capacity(indices.len() * set.dim);
    let mut labels = Vec::with_capacity(indices.len());
    for &i in indices {
        let inst = &set.instances[i];
        values.extend_from_slice(&inst.features);
        labels.push(
            inst.label
                .ok_or_else(|| Error::Data(format!("source instance {} has no label", inst.id)))?,
        );
    }
    Ok(SourceBatch {
        features: DenseMatrix::from_vec(indices.len(), set.dim, values)?,
        labels,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LrSchedule {
    Constant { scale: f64 },
    /// `scale · gamma^(epoch / every)`.
    Step { scale: f64, gamma: f64, every: usize },
}

impl LrSchedule {
    pub fn at(&self, epoch: usize) -> f64 {
        match *self {
            LrSchedule::Constant { scale } => scale,
            LrSchedule::Step { scale, gamma, every } => scale * gamma.powi((epoch / every.max(1)) as i32),
        }
    }
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule::Constant { scale: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSchedule {
    pub epochs: usize,
    pub batch_size_documents: usize,
    pub batch_size_source: usize,
    pub seed: u64,
    pub lr: LrSchedule,
    /// Redraw label-matched documents at the start of every epoch.
    pub resample_documents: bool,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size_documents: 32,
            batch_size_source: 32,
            seed: 0,
            lr: LrSchedule::default(),
            resample_documents: true,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size_documents == 0 || self.batch_size_source == 0 {
            return Err(Error::Config("batch sizes must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-step knobs beyond the learning-rate scale.
#[derive(Debug, Clone, Default)]
pub struct StepOptions {
    pub lr_scale: f64,
    /// Parameter groups left untouched by this step.
    pub frozen_groups: Vec<usize>,
}

impl StepOptions {
    pub fn scale(lr_scale: f64) -> Self {
        Self {
            lr_scale,
            frozen_groups: Vec::new(),
        }
    }
}

/// One forward pass, one backward pass from the combined objective and one
/// SGD update per parameter group. Returns the batch losses measured before
/// the update.
pub fn train_step(net: &mut StarNetwork, docs: &DocumentBatch, src: Option<&SourceBatch>, lr_scale: f64) -> Result<LossBundle> {
    train_step_with(net, docs, src, &StepOptions::scale(lr_scale))
}

pub fn train_step_with(
    net: &mut StarNetwork,
    docs: &DocumentBatch,
    src: Option<&SourceBatch>,
    opts: &StepOptions,
) -> Result<LossBundle> {
    let (tape, terms, root) = net.objective(docs, src)?;
    let bundle = LossBundle::from_terms(&tape, &terms, net.config().weights);
    if let Some(term) = bundle.first_non_finite() {
        return Err(Error::Numeric(format!("loss term {term} is not finite: {bundle:?}")));
    }
    let grads = tape.backward(root)?;
    let per_group = net.group_gradients(&grads);
    for (gi, (group, g)) in net.groups_mut().iter_mut().zip(per_group).enumerate() {
        if opts.frozen_groups.contains(&gi) {
            continue;
        }
        sgd_step(group, &g, opts.lr_scale)?;
    }
    Ok(bundle)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Step-averaged losses.
    pub losses: LossBundle,
    pub steps: usize,
    pub wall_secs: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
}

impl TrainReport {
    /// Tab-separated, one line per epoch.
    pub fn render(&self) -> String {
        let mut out = String::from("epoch\tst\tsds\tct\tsc\tmc\twall_secs\n");
        for e in &self.epochs {
            let l = &e.losses;
            let _ = writeln!(
                out,
                "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.3}",
                e.epoch, l.st, l.sds, l.ct, l.sc, l.mc, e.wall_secs
            );
        }
        out
    }
}

/// Deterministic batch composition for a training run.
pub struct BatchPlan<'a> {
    tar: Dataset,
    src: Option<&'a Dataset>,
    schedule: TrainSchedule,
    policy: DocumentPolicy,
    doc_rng: ChaCha8Rng,
    shuffle_rng: ChaCha8Rng,
    source_rng: ChaCha8Rng,
    documents: Vec<CrossModalDocument>,
    source_order: Vec<usize>,
    source_pos: usize,
}

impl<'a> BatchPlan<'a> {
    pub fn new(tar: &Dataset, src: Option<&'a Dataset>, modalities: &[&str], schedule: &TrainSchedule) -> Result<Self> {
        schedule.validate()?;
        let tar = tar.reordered(modalities)?;
        let policy = DocumentPolicy::for_dataset(&tar);
        let stream = |k: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(schedule.seed);
            r.set_stream(k);
            r
        };
        let mut doc_rng = stream(1);
        let documents = assemble_documents(&tar, policy, &mut doc_rng)?;
        if documents.is_empty() {
            return Err(Error::Data("no training documents".into()));
        }
        if let Some(s) = src {
            if s.modalities.first().is_none_or(|m| m.is_empty()) {
                return Err(Error::Data("source dataset is empty".into()));
            }
        }
        Ok(Self {
            tar,
            src,
            schedule: schedule.clone(),
            policy,
            doc_rng,
            shuffle_rng: stream(2),
            source_rng: stream(3),
            documents,
            source_order: Vec::new(),
            source_pos: 0,
        })
    }

    pub fn documents(&self) -> &[CrossModalDocument] {
        &self.documents
    }

    fn next_source(&mut self, n: usize) -> Result<Option<SourceBatch>> {
        let Some(src) = self.src else {
            return Ok(None);
        };
        let total = src.modalities[0].len();
        let mut idx = Vec::with_capacity(n);
        while idx.len() < n {
            if self.source_pos >= self.source_order.len() {
                self.source_order = (0..total).collect();
                self.source_order.shuffle(&mut self.source_rng);
                self.source_pos = 0;
            }
            let take = (n - idx.len()).min(self.source_order.len() - self.source_pos);
            idx.extend_from_slice(&self.source_order[self.source_pos..self.source_pos + take]);
            self.source_pos += take;
        }
        source_batch(src, &idx).map(Some)
    }

    /// Batches for epoch `epoch` (0-based).
    pub fn epoch(&mut self, epoch: usize) -> Result<Vec<(DocumentBatch, Option<SourceBatch>)>> {
        if epoch > 0 && self.schedule.resample_documents && self.policy == DocumentPolicy::ByLabel {
            self.documents = assemble_documents(&self.tar, self.policy, &mut self.doc_rng)?;
        }
        let mut order: Vec<usize> = (0..self.documents.len()).collect();
        order.shuffle(&mut self.shuffle_rng);
        let mut batches = Vec::new();
        for chunk in order.chunks(self.schedule.batch_size_documents) {
            let docs: Vec<CrossModalDocument> = chunk.iter().map(|&i| self.documents[i].clone()).collect();
            let batch = document_batch(&self.tar, &docs)?;
            let src = self.next_source(self.schedule.batch_size_source)?;
            batches.push((batch, src));
        }
        Ok(batches)
    }
}

/// Runs `schedule.epochs` epochs; `on_epoch` sees the network after each one
/// (e.g. to write a checkpoint).
pub fn train_with<F>(
    net: &mut StarNetwork,
    src: Option<&Dataset>,
    tar: &Dataset,
    schedule: &TrainSchedule,
    mut on_epoch: F,
) -> Result<TrainReport>
where
    F: FnMut(&StarNetwork, &EpochRecord) -> Result<()>,
{
    let mut report = TrainReport::default();
    if schedule.epochs == 0 {
        return Ok(report);
    }
    let src = if net.config().source_enabled() {
        Some(src.ok_or_else(|| Error::Config("source pathway is enabled but no source dataset was given".into()))?)
    } else {
        None
    };
    let modalities: Vec<String> = net.config().modalities().iter().map(|s| s.to_string()).collect();
    let tags: Vec<&str> = modalities.iter().map(String::as_str).collect();
    let mut plan = BatchPlan::new(tar, src, &tags, schedule)?;

    for epoch in 0..schedule.epochs {
        let start = Instant::now();
        let lr_scale = schedule.lr.at(epoch);
        let batches = plan.epoch(epoch)?;
        let mut sum = LossBundle::default();
        for (docs, src_batch) in &batches {
            let b = train_step(net, docs, src_batch.as_ref(), lr_scale).map_err(|e| match e {
                Error::Numeric(msg) => Error::Numeric(format!("epoch {epoch}: {msg}")),
                other => other,
            })?;
            sum.st += b.st;
            sum.sds += b.sds;
            sum.ct += b.ct;
            sum.sc += b.sc;
            sum.mc += b.mc;
        }
        let n = batches.len().max(1) as f64;
        let record = EpochRecord {
            epoch: epoch + 1,
            losses: LossBundle {
                st: sum.st / n,
                sds: sum.sds / n,
                ct: sum.ct / n,
                sc: sum.sc / n,
                mc: sum.mc / n,
                weights: net.config().weights,
            },
            steps: batches.len(),
            wall_secs: start.elapsed().as_secs_f64(),
        };
        on_epoch(net, &record)?;
        report.epochs.push(record);
    }
    Ok(report)
}

pub fn train(net: &mut StarNetwork, src: Option<&Dataset>, tar: &Dataset, schedule: &TrainSchedule) -> Result<TrainReport> {
    train_with(net, src, tar, schedule, |_, _| Ok(()))
}
