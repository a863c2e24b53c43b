//! Python bindings: build, train and evaluate networks from Python.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use mhtn::data::{generate_synthetic, Dataset, SyntheticSpec};
use mhtn::eval::{average_precision as ap, cosine_similarity as cos, evaluate_all, EmbeddedSet};
use mhtn::losses::kernel::{mmd_squared_value, KernelSpec};
use mhtn::network::{checkpoint_digest, load_checkpoint, save_checkpoint};
use mhtn::{DenseMatrix, Error, NetworkConfig, StarNetwork, TrainSchedule};

fn to_py(e: Error) -> PyErr {
    match e.exit_code() {
        1 => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn matrix(rows: Vec<Vec<f64>>, cols: usize) -> PyResult<DenseMatrix> {
    if rows.is_empty() {
        return Ok(DenseMatrix::zeros(0, cols));
    }
    DenseMatrix::from_rows(&rows).map_err(to_py)
}

fn rows(m: &DenseMatrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

/// A synthetic source/target benchmark.
#[pyclass(module = "mhtn_py", frozen)]
struct Benchmark {
    source: Dataset,
    target: Dataset,
}

#[pymethods]
impl Benchmark {
    #[new]
    #[pyo3(signature = (seed=0, num_classes=4, per_class=50, paired=false))]
    fn new(seed: u64, num_classes: usize, per_class: usize, paired: bool) -> PyResult<Self> {
        let spec = SyntheticSpec {
            seed,
            num_classes,
            per_class,
            paired,
            ..SyntheticSpec::default()
        };
        let (source, target) = generate_synthetic(&spec).map_err(to_py)?;
        Ok(Self { source, target })
    }

    fn modalities(&self) -> Vec<(String, usize)> {
        self.target.modalities.iter().map(|m| (m.modality.clone(), m.dim)).collect()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.target.num_classes
    }

    #[getter]
    fn source_classes(&self) -> usize {
        self.source.num_classes
    }

    /// `(ids, labels, features)` of one target modality.
    fn target(&self, modality: &str) -> PyResult<(Vec<u64>, Vec<Option<usize>>, Vec<Vec<f64>>)> {
        let m = self
            .target
            .modality(modality)
            .ok_or_else(|| PyValueError::new_err(format!("unknown modality {modality:?}")))?;
        Ok((m.ids(), m.labels(), rows(&m.feature_matrix())))
    }
}

/// A star network with its parameters.
#[pyclass(module = "mhtn_py")]
struct Network {
    inner: StarNetwork,
}

#[pymethods]
impl Network {
    #[new]
    #[pyo3(signature = (modalities, num_classes, source_classes, width=128, seed=0, no_source=false, no_sl_net=false, no_adver=false, no_sds=false, lam=None))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        modalities: Vec<(String, usize)>,
        num_classes: usize,
        source_classes: usize,
        width: usize,
        seed: u64,
        no_source: bool,
        no_sl_net: bool,
        no_adver: bool,
        no_sds: bool,
        lam: Option<f64>,
    ) -> PyResult<Self> {
        let tags: Vec<(&str, usize)> = modalities.iter().map(|(t, d)| (t.as_str(), *d)).collect();
        let mut cfg = NetworkConfig::new(&tags, num_classes, source_classes).with_uniform_width(width);
        cfg.ablation.no_source = no_source;
        cfg.ablation.no_sl_net = no_sl_net;
        cfg.ablation.no_adver = no_adver;
        cfg.ablation.no_sds = no_sds;
        if let Some(l) = lam {
            cfg.weights.lambda = l;
        }
        Ok(Self {
            inner: StarNetwork::build(cfg, seed).map_err(to_py)?,
        })
    }

    fn group_names(&self) -> Vec<String> {
        self.inner.groups().iter().map(|g| g.name.clone()).collect()
    }

    fn config_digest(&self) -> String {
        self.inner.config().digest_hex()
    }

    fn checkpoint_digest(&self) -> String {
        checkpoint_digest(&self.inner)
    }

    /// Class-probability vectors for rows of `modality`.
    fn embed(&self, modality: &str, features: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let idx = self
            .inner
            .config()
            .modality_index(modality)
            .ok_or_else(|| PyValueError::new_err(format!("unknown modality {modality:?}")))?;
        let x = matrix(features, self.inner.config().pathways[idx].input_dim)?;
        Ok(rows(&self.inner.embed(modality, &x).map_err(to_py)?))
    }

    /// Trains on the benchmark's target set; returns per-epoch `(st, sds, ct, sc, mc)`.
    #[pyo3(signature = (bench, epochs=30, seed=0))]
    fn train(&mut self, bench: &Benchmark, epochs: usize, seed: u64) -> PyResult<Vec<(f64, f64, f64, f64, f64)>> {
        let schedule = TrainSchedule {
            epochs,
            seed,
            ..TrainSchedule::default()
        };
        let report = mhtn::train(&mut self.inner, Some(&bench.source), &bench.target, &schedule).map_err(to_py)?;
        Ok(report
            .epochs
            .iter()
            .map(|e| (e.losses.st, e.losses.sds, e.losses.ct, e.losses.sc, e.losses.mc))
            .collect())
    }

    /// Average MAP over all ordered modality pairs of the benchmark's target set.
    fn evaluate(&self, bench: &Benchmark) -> PyResult<f64> {
        let mut sets = Vec::new();
        for m in &bench.target.modalities {
            let labels = m
                .labels()
                .into_iter()
                .map(|l| l.ok_or_else(|| PyValueError::new_err("unlabeled instance")))
                .collect::<PyResult<Vec<_>>>()?;
            let emb = self.inner.embed(&m.modality, &m.feature_matrix()).map_err(to_py)?;
            sets.push(EmbeddedSet::new(m.modality.clone(), m.ids(), labels, emb).map_err(to_py)?);
        }
        Ok(evaluate_all(&sets).map_err(to_py)?.average)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_checkpoint(&self.inner, &path).map_err(to_py)
    }

    /// Loads parameters saved by a network with the same configuration.
    fn load(&mut self, path: PathBuf) -> PyResult<()> {
        self.inner = load_checkpoint(&path, self.inner.config().clone()).map_err(to_py)?;
        Ok(())
    }
}

#[pyfunction]
fn average_precision(relevance: Vec<bool>, relevant_total: usize) -> PyResult<f64> {
    ap(&relevance, relevant_total).map_err(to_py)
}

#[pyfunction]
fn cosine_similarity(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    if a.len() != b.len() {
        return Err(PyValueError::new_err("vectors differ in length"));
    }
    Ok(cos(&a, &b))
}

/// Biased multi-kernel Gaussian MMD² between two row sets.
#[pyfunction]
#[pyo3(signature = (a, b, bandwidths=vec![1.0]))]
fn mmd_squared(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>, bandwidths: Vec<f64>) -> PyResult<f64> {
    let ka = DenseMatrix::from_rows(&a).map_err(to_py)?;
    let kb = DenseMatrix::from_rows(&b).map_err(to_py)?;
    let spec = KernelSpec::uniform(bandwidths).map_err(to_py)?;
    mmd_squared_value(&ka, &kb, &spec).map_err(to_py)
}

#[pymodule]
fn mhtn_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Benchmark>()?;
    m.add_class::<Network>()?;
    m.add_function(wrap_pyfunction!(average_precision, m)?)?;
    m.add_function(wrap_pyfunction!(cosine_similarity, m)?)?;
    m.add_function(wrap_pyfunction!(mmd_squared, m)?)?;
    Ok(())
}
