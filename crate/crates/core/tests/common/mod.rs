#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mhtn::autodiff::{glorot_uniform, sgd_step, DenseMatrix, ParamGroup, ParamId, Tape};
use mhtn::data::{generate_synthetic, split, Dataset, SplitFractions, SyntheticSpec};
use mhtn::eval::{evaluate_all, EmbeddedSet, TaskMatrix};
use mhtn::losses::{KernelChoice, KernelSpec};
use mhtn::network::{Ablation, DocumentBatch, NetworkConfig, SourceBatch, StarNetwork};
use mhtn::trainer::{train, TrainSchedule};

pub mod checks;

pub const BENCH_WIDTH: usize = 128;
pub const BENCH_EPOCHS: usize = 30;

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DenseMatrix {
    DenseMatrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

/// Small three-modality network with a fixed kernel so MMD is smooth in its inputs.
pub fn tiny_config(lambda: f64) -> NetworkConfig {
    let mut cfg = NetworkConfig::new(&[("image", 7), ("text", 5), ("audio", 6)], 3, 4).with_uniform_width(8);
    cfg.discriminator_widths = vec![6];
    cfg.common_widths = vec![8, 6];
    cfg.weights.lambda = lambda;
    cfg.weights.ct = 0.05;
    cfg.kernel = KernelChoice::Fixed(KernelSpec::uniform(vec![2.0, 8.0]).unwrap());
    cfg
}

pub fn tiny_batches(cfg: &NetworkConfig, seed: u64, docs: usize, src: usize) -> (DocumentBatch, SourceBatch) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let features = cfg
        .pathways
        .iter()
        .map(|p| random_matrix(&mut rng, docs, p.input_dim, 1.5))
        .collect();
    let labels = (0..docs).map(|i| i % cfg.num_classes_target).collect();
    let source = SourceBatch {
        features: random_matrix(&mut rng, src, cfg.image().input_dim, 1.5),
        labels: (0..src).map(|i| i % cfg.num_classes_source).collect(),
    };
    (DocumentBatch { features, labels }, source)
}

/// Default synthetic benchmark split 70/20/10: `(source, train, test)`.
pub fn benchmark(seed: u64) -> (Dataset, Dataset, Dataset) {
    let spec = SyntheticSpec {
        seed,
        ..SyntheticSpec::default()
    };
    let (source, target) = generate_synthetic(&spec).unwrap();
    let parts = split(&target, SplitFractions::new(0.7, 0.2, 0.1).unwrap(), seed).unwrap();
    (source, parts.train, parts.test)
}

pub fn bench_config(source: &Dataset, train: &Dataset, ablation: Ablation) -> NetworkConfig {
    let dims: Vec<(&str, usize)> = train.modalities.iter().map(|m| (m.modality.as_str(), m.dim)).collect();
    let mut cfg = NetworkConfig::new(&dims, train.num_classes, source.num_classes).with_uniform_width(BENCH_WIDTH);
    cfg.ablation = ablation;
    cfg
}

pub fn embed_all(net: &StarNetwork, ds: &Dataset) -> Vec<EmbeddedSet> {
    ds.modalities
        .iter()
        .map(|m| {
            let labels = m.labels().into_iter().map(Option::unwrap).collect();
            EmbeddedSet::new(m.modality.clone(), m.ids(), labels, net.embed(&m.modality, &m.feature_matrix()).unwrap())
                .unwrap()
        })
        .collect()
}

pub struct BenchRun {
    pub net: StarNetwork,
    pub untrained: TaskMatrix,
    pub trained: TaskMatrix,
    pub train: Dataset,
    pub test: Dataset,
}

pub fn bench_run(seed: u64, ablation: Ablation, epochs: usize) -> BenchRun {
    let (source, train_set, test) = benchmark(seed);
    let cfg = bench_config(&source, &train_set, ablation);
    let mut net = StarNetwork::build(cfg, seed).unwrap();
    let untrained = evaluate_all(&embed_all(&net, &test)).unwrap();
    let schedule = TrainSchedule {
        epochs,
        seed,
        ..TrainSchedule::default()
    };
    let src = net.config().source_enabled().then_some(&source);
    train(&mut net, src, &train_set, &schedule).unwrap();
    let trained = evaluate_all(&embed_all(&net, &test)).unwrap();
    BenchRun {
        net,
        untrained,
        trained,
        train: train_set,
        test,
    }
}

/// Row-stacked representations with their modality index.
pub fn stack_by_modality(reps: &[DenseMatrix]) -> (DenseMatrix, Vec<usize>) {
    let parts: Vec<&DenseMatrix> = reps.iter().collect();
    let x = DenseMatrix::vstack(&parts).unwrap();
    let y = reps.iter().enumerate().flat_map(|(m, r)| std::iter::repeat(m).take(r.rows())).collect();
    (x, y)
}

pub fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

pub fn accuracy(scores: &DenseMatrix, labels: &[usize]) -> f64 {
    let hits = (0..scores.rows()).filter(|&r| argmax(scores.row(r)) == labels[r]).count();
    hits as f64 / labels.len() as f64
}

/// Softmax classifier trained with plain full-batch SGD: linear when
/// `hidden == 0`, otherwise one ReLU hidden layer.
pub struct Probe {
    group: ParamGroup,
}

impl Probe {
    pub fn fit(x: &DenseMatrix, y: &[usize], classes: usize, hidden: usize, steps: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut group = ParamGroup::new("probe", 0.1, 0.0).unwrap();
        let mut fan_in = x.cols();
        if hidden > 0 {
            group.push("w0", glorot_uniform(fan_in, hidden, &mut rng));
            group.push("b0", DenseMatrix::zeros(1, hidden));
            fan_in = hidden;
        }
        group.push("w1", glorot_uniform(fan_in, classes, &mut rng));
        group.push("b1", DenseMatrix::zeros(1, classes));
        let mut probe = Self { group };
        for _ in 0..steps {
            let mut tape = Tape::new();
            let logits = probe.forward(&mut tape, x);
            let sum = tape.softmax_xent_sum(logits, y).unwrap();
            let loss = tape.scale(sum, 1.0 / y.len() as f64);
            let grads = tape.backward(loss).unwrap();
            let g: Vec<DenseMatrix> = probe
                .group
                .matrices
                .iter()
                .enumerate()
                .map(|(i, m)| grads.param_or_zeros(ParamId::new(0, i), m.shape()))
                .collect();
            sgd_step(&mut probe.group, &g, 1.0).unwrap();
        }
        probe
    }

    fn forward(&self, tape: &mut Tape, x: &DenseMatrix) -> mhtn::Var {
        let m = &self.group.matrices;
        let mut h = tape.constant(x.clone());
        let layers = m.len() / 2;
        for l in 0..layers {
            let w = tape.param(ParamId::new(0, 2 * l), &m[2 * l]);
            let b = tape.param(ParamId::new(0, 2 * l + 1), &m[2 * l + 1]);
            h = tape.affine(h, w, b).unwrap();
            if l + 1 < layers {
                h = tape.relu(h);
            }
        }
        h
    }

    pub fn scores(&self, x: &DenseMatrix) -> DenseMatrix {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, x);
        tape.value(out).clone()
    }
}

/// Accuracy of the run's own discriminator at telling modalities apart from
/// common representations of `ds`.
pub fn discriminator_accuracy(net: &StarNetwork, ds: &Dataset) -> f64 {
    let reps: Vec<DenseMatrix> = ds
        .modalities
        .iter()
        .map(|m| net.common_representation(&m.modality, &m.feature_matrix()).unwrap())
        .collect();
    let (x, y) = stack_by_modality(&reps);
    accuracy(&net.discriminate(&x).unwrap(), &y)
}

/// Test accuracy of a freshly trained modality probe on representations
/// produced by `rep` (fit on `train`, scored on `test`).
pub fn probe_accuracy<F>(train: &Dataset, test: &Dataset, rep: F, seed: u64) -> f64
where
    F: Fn(&str, &DenseMatrix) -> DenseMatrix,
{
    let gather = |ds: &Dataset| {
        let reps: Vec<DenseMatrix> = ds.modalities.iter().map(|m| rep(&m.modality, &m.feature_matrix())).collect();
        stack_by_modality(&reps)
    };
    let (xtr, ytr) = gather(train);
    let (xte, yte) = gather(test);
    let probe = Probe::fit(&xtr, &ytr, train.modalities.len(), 32, 300, seed);
    accuracy(&probe.scores(&xte), &yte)
}
