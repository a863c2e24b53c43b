//! Check routines shared by the integration tests and the acceptance report.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{random_matrix, tiny_batches, tiny_config};
use mhtn::autodiff::{glorot_uniform, sgd_step, DenseMatrix, ParamGroup, ParamId, Tape, Var};
use mhtn::eval::average_precision;
use mhtn::losses::kernel::{mmd_squared_value, KernelSpec};
use mhtn::losses::{cross_modal_transfer_loss, LossBundle, LossTerms};
use mhtn::network::{DocumentBatch, NetworkConfig, SourceBatch, StarNetwork};
use mhtn::trainer::train_step;

// ---- gradient integrity

const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

#[derive(Clone, Copy, Debug)]
pub enum Term {
    St,
    Sds,
    Ct,
    Sc,
    Mc,
    Total,
}

fn pick(terms: &LossTerms, root: Var, t: Term) -> Var {
    match t {
        Term::St => terms.st,
        Term::Sds => terms.sds,
        Term::Ct => terms.ct,
        Term::Sc => terms.sc,
        Term::Mc => terms.mc,
        Term::Total => Some(root),
    }
    .expect("term enabled")
}

fn value(net: &StarNetwork, docs: &DocumentBatch, src: &SourceBatch, t: Term) -> f64 {
    let (tape, terms, root) = net.objective(docs, Some(src)).unwrap();
    tape.scalar(pick(&terms, root, t)).unwrap()
}

/// The function the tape differentiates for `group`: the generator sees the
/// reversed discriminator loss, the discriminator sees the plain one.
fn target(net: &StarNetwork, docs: &DocumentBatch, src: &SourceBatch, t: Term, is_disc: bool) -> f64 {
    let lambda = net.config().weights.lambda;
    match (t, is_disc) {
        (Term::Mc, false) => -lambda * value(net, docs, src, Term::Mc),
        (Term::Total, false) => {
            let (tape, terms, _) = net.objective(docs, Some(src)).unwrap();
            LossBundle::from_terms(&tape, &terms, net.config().weights).generator_objective()
        }
        _ => value(net, docs, src, t),
    }
}

pub fn worst_relative_error(t: Term, lambda: f64, seed: u64) -> (f64, usize) {
    let cfg = tiny_config(lambda);
    let mut net = StarNetwork::build(cfg.clone(), seed).unwrap();
    let (docs, src) = tiny_batches(&cfg, seed + 100, 6, 5);
    let (tape, terms, root): (Tape, LossTerms, Var) = net.objective(&docs, Some(&src)).unwrap();
    let grads = net.group_gradients(&tape.backward(pick(&terms, root, t)).unwrap());
    let disc = net.layout().discriminator;

    let mut worst = 0.0f64;
    let mut checked = 0;
    for gi in 0..net.groups().len() {
        let is_disc = Some(gi) == disc;
        for mi in 0..net.groups()[gi].matrices.len() {
            for k in 0..net.groups()[gi].matrices[mi].len() {
                let orig = net.groups()[gi].matrices[mi].values()[k];
                net.groups_mut()[gi].matrices[mi].values_mut()[k] = orig + H;
                let up = target(&net, &docs, &src, t, is_disc);
                net.groups_mut()[gi].matrices[mi].values_mut()[k] = orig - H;
                let down = target(&net, &docs, &src, t, is_disc);
                net.groups_mut()[gi].matrices[mi].values_mut()[k] = orig;
                let numeric = (up - down) / (2.0 * H);
                let analytic = grads[gi][mi].values()[k];
                let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
                if err > worst {
                    worst = err;
                }
                checked += 1;
            }
        }
    }
    (worst, checked)
}


// ---- gradient routing

/// Names of the groups with at least one nonzero gradient entry.
pub fn reached(term: &str) -> Vec<String> {
    let cfg = tiny_config(0.3);
    let net = StarNetwork::build(cfg.clone(), 21).unwrap();
    let (docs, src) = tiny_batches(&cfg, 22, 6, 6);
    let (tape, terms, root) = net.objective(&docs, Some(&src)).unwrap();
    let var = match term {
        "ST" => terms.st.unwrap(),
        "SDS" => terms.sds.unwrap(),
        "CT" => terms.ct.unwrap(),
        "SC" => terms.sc.unwrap(),
        "MC" => terms.mc.unwrap(),
        _ => root,
    };
    let grads = net.group_gradients(&tape.backward(var).unwrap());
    net.groups()
        .iter()
        .zip(&grads)
        .filter(|(_, g)| g.iter().any(|m| m.values().iter().any(|&v| v != 0.0)))
        .map(|(group, _)| group.name.clone())
        .collect()
}


// ---- degenerate configuration

const SEED: u64 = 13;
const STEPS: usize = 10;

pub fn degenerate_config() -> NetworkConfig {
    let mut cfg = NetworkConfig::new(&[("image", 7), ("text", 5), ("audio", 6)], 3, 4).with_uniform_width(8);
    cfg.common_widths = vec![8, 6];
    cfg.discriminator_widths = vec![6];
    cfg.weights.lambda = 0.0;
    cfg.weights.st = 0.0;
    cfg.weights.sds = 0.0;
    cfg.weights.ct = 0.0;
    cfg.ablation.no_source = true;
    cfg
}

/// Reference classifier: each modality's stack of affine+ReLU layers, shared
/// affine+ReLU common layers and a linear classifier, trained on the mean over
/// documents of the per-modality softmax cross-entropy.
struct Reference {
    groups: Vec<ParamGroup>,
    depth: Vec<usize>,
}

impl Reference {
    fn new(cfg: &NetworkConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut groups = Vec::new();
        let mut depth = Vec::new();
        let stack = |g: &mut ParamGroup, fan_in: usize, widths: &[usize], rng: &mut ChaCha8Rng| {
            let mut f = fan_in;
            for &w in widths {
                g.push("w", glorot_uniform(f, w, rng));
                g.push("b", DenseMatrix::zeros(1, w));
                f = w;
            }
        };
        for p in &cfg.pathways {
            let mut g = ParamGroup::new(p.modality.clone(), p.learning_rate, cfg.weight_decay).unwrap();
            stack(&mut g, p.input_dim, &p.layer_widths, &mut rng);
            depth.push(p.layer_widths.len());
            groups.push(g);
        }
        let mut c = ParamGroup::new("common", cfg.common_learning_rate, cfg.weight_decay).unwrap();
        stack(&mut c, cfg.image().output_width(), &cfg.common_widths, &mut rng);
        stack(&mut c, *cfg.common_widths.last().unwrap(), &[cfg.num_classes_target], &mut rng);
        depth.push(cfg.common_widths.len() + 1);
        groups.push(c);
        Self { groups, depth }
    }

    fn layers(&self, tape: &mut Tape, g: usize, mut h: Var, relu_last: bool) -> Var {
        let n = self.depth[g];
        for l in 0..n {
            let w = tape.param(ParamId::new(g, 2 * l), &self.groups[g].matrices[2 * l]);
            let b = tape.param(ParamId::new(g, 2 * l + 1), &self.groups[g].matrices[2 * l + 1]);
            h = tape.affine(h, w, b).unwrap();
            if l + 1 < n || relu_last {
                h = tape.relu(h);
            }
        }
        h
    }

    fn step(&mut self, features: &[DenseMatrix], labels: &[usize]) {
        let common = self.groups.len() - 1;
        let mut tape = Tape::new();
        let mut losses = Vec::new();
        for (m, x) in features.iter().enumerate() {
            let input = tape.constant(x.clone());
            let s = self.layers(&mut tape, m, input, true);
            let logits = self.layers(&mut tape, common, s, false);
            losses.push(tape.softmax_xent_sum(logits, labels).unwrap());
        }
        let total = tape.add_all(&losses).unwrap().unwrap();
        let loss = tape.scale(total, 1.0 / labels.len() as f64);
        let grads = tape.backward(loss).unwrap();
        for (gi, g) in self.groups.iter_mut().enumerate() {
            let gs: Vec<DenseMatrix> = g
                .matrices
                .iter()
                .enumerate()
                .map(|(mi, m)| grads.param_or_zeros(ParamId::new(gi, mi), m.shape()))
                .collect();
            sgd_step(g, &gs, 1.0).unwrap();
        }
    }
}

fn bits(ms: &[DenseMatrix]) -> Vec<u64> {
    ms.iter().flat_map(|m| m.values().iter().map(|v| v.to_bits())).collect()
}

pub fn degenerate_trajectory() -> Result<(), String> {
    let cfg = degenerate_config();
    let mut net = StarNetwork::build(cfg.clone(), SEED).unwrap();
    let mut reference = Reference::new(&cfg, SEED);

    let common = net.layout().common;
    // the shared common layers and the classifier, in storage order
    if bits(&net.groups()[common].matrices) != bits(&reference.groups[3].matrices) {
        return Err("initial θ_C differs".into());
    }

    for step in 0..STEPS {
        let (docs, _) = tiny_batches(&cfg, 500 + step as u64, 8, 1);
        train_step(&mut net, &docs, None, 1.0).unwrap();
        reference.step(&docs.features, &docs.labels);
        if bits(&net.groups()[common].matrices) != bits(&reference.groups[3].matrices) {
            return Err(format!("θ_C diverged at step {}", step + 1));
        }
        for m in 0..3 {
            if bits(&net.groups()[net.layout().pathways[m]].matrices) != bits(&reference.groups[m].matrices) {
                return Err(format!("pathway {m} diverged at step {}", step + 1));
            }
        }
    }
    Ok(())
}

// ---- oracles

fn gaussian(x: &[f64], y: &[f64], bandwidths: &[f64]) -> f64 {
    let mut d2 = 0.0;
    for i in 0..x.len() {
        d2 += (x[i] - y[i]) * (x[i] - y[i]);
    }
    let mut k = 0.0;
    for s in bandwidths {
        k += (-d2 / (2.0 * s * s)).exp() / bandwidths.len() as f64;
    }
    k
}

/// Literal double-sum biased MMD².
pub fn mmd_oracle(a: &DenseMatrix, b: &DenseMatrix, bandwidths: &[f64]) -> f64 {
    let (n, m) = (a.rows() as f64, b.rows() as f64);
    let mut xx = 0.0;
    for i in 0..a.rows() {
        for j in 0..a.rows() {
            xx += gaussian(a.row(i), a.row(j), bandwidths);
        }
    }
    let mut yy = 0.0;
    for i in 0..b.rows() {
        for j in 0..b.rows() {
            yy += gaussian(b.row(i), b.row(j), bandwidths);
        }
    }
    let mut xy = 0.0;
    for i in 0..a.rows() {
        for j in 0..b.rows() {
            xy += gaussian(a.row(i), b.row(j), bandwidths);
        }
    }
    xx / (n * n) + yy / (m * m) - 2.0 * xy / (n * m)
}

/// Largest |MMD² − oracle| over `pairs` random set pairs.
pub fn mmd_oracle_max_error(pairs: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..pairs {
        let dim = rng.random_range(1..6);
        let (na, nb) = (rng.random_range(1..12), rng.random_range(1..12));
        let a = random_matrix(&mut rng, na, dim, 2.0);
        let b = random_matrix(&mut rng, nb, dim, 2.0);
        let bws: Vec<f64> = (0..rng.random_range(1..4)).map(|_| rng.random_range(0.3..4.0)).collect();
        let spec = KernelSpec::uniform(bws.clone()).unwrap();
        let got = mmd_squared_value(&a, &b, &spec).unwrap();
        worst = worst.max((got - mmd_oracle(&a, &b, &bws)).abs());
    }
    worst
}

/// AP by the definition: for every rank k holding a relevant item, the
/// precision of the top k, summed and divided by R.
pub fn ap_oracle(rel: &[bool], r: usize) -> f64 {
    if r == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for k in 1..=rel.len() {
        if rel[k - 1] {
            let mut rk = 0;
            for item in &rel[..k] {
                if *item {
                    rk += 1;
                }
            }
            total += rk as f64 / k as f64;
        }
    }
    total / r as f64
}

/// Number of random relevance lists where AP differs from the oracle in any bit.
pub fn ap_oracle_mismatches(lists: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0;
    for _ in 0..lists {
        let n = rng.random_range(0..80);
        let p = rng.random_range(0.0..1.0);
        let rel: Vec<bool> = (0..n).map(|_| rng.random_bool(p)).collect();
        let r = rel.iter().filter(|&&x| x).count() + rng.random_range(0..3);
        if average_precision(&rel, r).unwrap().to_bits() != ap_oracle(&rel, r).to_bits() {
            bad += 1;
        }
    }
    bad
}

/// Largest |CT − triple-loop oracle| over random layer stacks.
pub fn ct_oracle_max_error(cases: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let docs = rng.random_range(1..9);
        let layers = rng.random_range(1..4);
        let widths: Vec<usize> = (0..layers).map(|_| rng.random_range(1..7)).collect();
        let others = rng.random_range(1..5);
        let image: Vec<DenseMatrix> = widths.iter().map(|&w| random_matrix(&mut rng, docs, w, 3.0)).collect();
        let rest: Vec<Vec<DenseMatrix>> = (0..others)
            .map(|_| widths.iter().map(|&w| random_matrix(&mut rng, docs, w, 3.0)).collect())
            .collect();

        let mut tape = Tape::new();
        let img_vars: Vec<Var> = image.iter().map(|m| tape.constant(m.clone())).collect();
        let rest_vars: Vec<Vec<Var>> = rest
            .iter()
            .map(|ls| ls.iter().map(|m| tape.constant(m.clone())).collect())
            .collect();
        let ct = cross_modal_transfer_loss(&mut tape, &img_vars, &rest_vars).unwrap();
        let got = tape.scalar(ct).unwrap();

        let mut want = 0.0;
        for other in &rest {
            for (l, layer) in other.iter().enumerate() {
                for j in 0..docs {
                    for d in 0..widths[l] {
                        let diff = image[l].get(j, d) - layer.get(j, d);
                        want += diff * diff;
                    }
                }
            }
        }
        worst = worst.max((got - want).abs() / want.abs().max(1.0));
    }
    worst
}
