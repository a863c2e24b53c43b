//! Bi-modal retrieval evaluation: cosine ranking, AP/MAP and 11-point PR curves.
//!
//! Ranking sorts by descending cosine similarity, then ascending instance id.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::DenseMatrix;
use crate::error::{Error, Result};

/// Recall levels of the interpolated PR curve.
pub const PR_LEVELS: usize = 11;

/// `dot(a, b) / (‖a‖·‖b‖)`; 0 if either vector has zero norm.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

/// `(1/R) Σ_k (R_k / k) rel_k`, where `R_k` counts relevant items in the top `k`.
pub fn average_precision(relevance: &[bool], r: usize) -> Result<f64> {
    let hits = relevance.iter().filter(|&&x| x).count();
    if hits > r {
        return Err(Error::Data(format!("{hits} relevant items ranked but R = {r}")));
    }
    if r == 0 {
        return Ok(0.0);
    }
    let mut found = 0usize;
    let mut acc = 0.0;
    for (k, &rel) in relevance.iter().enumerate() {
        if rel {
            found += 1;
            acc += found as f64 / (k + 1) as f64;
        }
    }
    Ok(acc / r as f64)
}

/// 11-point interpolated precision: at each recall level `i/10`, the best
/// precision reached at any rank whose recall is at least that level.
pub fn interpolated_pr(relevance: &[bool], r: usize) -> [f64; PR_LEVELS] {
    let mut out = [0.0; PR_LEVELS];
    if r == 0 {
        return out;
    }
    let mut found = 0usize;
    let mut points = Vec::with_capacity(relevance.len());
    for (k, &rel) in relevance.iter().enumerate() {
        if rel {
            found += 1;
        }
        points.push((found as f64 / r as f64, found as f64 / (k + 1) as f64));
    }
    for (i, slot) in out.iter_mut().enumerate() {
        let level = i as f64 / (PR_LEVELS - 1) as f64;
        *slot = points
            .iter()
            .filter(|(rec, _)| *rec >= level - 1e-12)
            .map(|&(_, p)| p)
            .fold(0.0, f64::max);
    }
    out
}

/// Embedded instances of one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedSet {
    pub modality: String,
    pub ids: Vec<u64>,
    pub labels: Vec<usize>,
    pub embeddings: DenseMatrix,
}

impl EmbeddedSet {
    pub fn new(modality: impl Into<String>, ids: Vec<u64>, labels: Vec<usize>, embeddings: DenseMatrix) -> Result<Self> {
        if ids.len() != embeddings.rows() || labels.len() != embeddings.rows() {
            return Err(Error::Data(format!(
                "{} ids, {} labels, {} embedding rows",
                ids.len(),
                labels.len(),
                embeddings.rows()
            )));
        }
        Ok(Self {
            modality: modality.into(),
            ids,
            labels,
            embeddings,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedRetrieval {
    pub query_id: u64,
    pub query_modality: String,
    /// `(instance id, similarity)`, best first.
    pub gallery: Vec<(u64, f64)>,
    pub relevance: Vec<bool>,
}

/// Ranks the whole gallery for row `q` of `query`.
pub fn rank(query: &EmbeddedSet, q: usize, gallery: &EmbeddedSet) -> RankedRetrieval {
    let qv = query.embeddings.row(q);
    let mut scored: Vec<(u64, f64, bool)> = (0..gallery.len())
        .map(|g| {
            (
                gallery.ids[g],
                cosine_similarity(qv, gallery.embeddings.row(g)),
                gallery.labels[g] == query.labels[q],
            )
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    RankedRetrieval {
        query_id: query.ids[q],
        query_modality: query.modality.clone(),
        gallery: scored.iter().map(|&(id, s, _)| (id, s)).collect(),
        relevance: scored.iter().map(|&(_, _, r)| r).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub query_modality: String,
    pub gallery_modality: String,
    pub map: f64,
    pub queries: usize,
    /// `(recall, precision)` at the 11 standard recall levels.
    pub pr_curve: Vec<(f64, f64)>,
}

/// MAP and mean interpolated PR curve of `query → gallery` retrieval.
pub fn evaluate_task(query: &EmbeddedSet, gallery: &EmbeddedSet) -> Result<TaskResult> {
    if query.is_empty() || gallery.is_empty() {
        return Err(Error::Data(format!(
            "{} -> {}: empty query or gallery set",
            query.modality, gallery.modality
        )));
    }
    if query.embeddings.cols() != gallery.embeddings.cols() {
        return Err(Error::Shape {
            op: "evaluate_task",
            left: query.embeddings.shape(),
            right: gallery.embeddings.shape(),
        });
    }
    let per_query: Vec<(f64, [f64; PR_LEVELS])> = (0..query.len())
        .into_par_iter()
        .map(|q| {
            let ranked = rank(query, q, gallery);
            let r = gallery.labels.iter().filter(|&&l| l == query.labels[q]).count();
            Ok((average_precision(&ranked.relevance, r)?, interpolated_pr(&ranked.relevance, r)))
        })
        .collect::<Result<_>>()?;
    // sequential merge keeps the sum order fixed
    let n = per_query.len() as f64;
    let mut map = 0.0;
    let mut pr = [0.0; PR_LEVELS];
    for (ap, curve) in &per_query {
        map += ap;
        for (acc, p) in pr.iter_mut().zip(curve) {
            *acc += p;
        }
    }
    Ok(TaskResult {
        query_modality: query.modality.clone(),
        gallery_modality: gallery.modality.clone(),
        map: map / n,
        queries: per_query.len(),
        pr_curve: pr
            .iter()
            .enumerate()
            .map(|(i, p)| (i as f64 / (PR_LEVELS - 1) as f64, p / n))
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMatrix {
    pub tasks: Vec<TaskResult>,
    pub average: f64,
}

impl TaskMatrix {
    pub fn task(&self, query: &str, gallery: &str) -> Option<&TaskResult> {
        self.tasks
            .iter()
            .find(|t| t.query_modality == query && t.gallery_modality == gallery)
    }
}

/// Every ordered pair `X → Y` with `X ≠ Y`, in set order.
pub fn evaluate_all(sets: &[EmbeddedSet]) -> Result<TaskMatrix> {
    if sets.len() < 2 {
        return Err(Error::Data(format!("need at least 2 modalities, got {}", sets.len())));
    }
    let mut tasks = Vec::with_capacity(sets.len() * (sets.len() - 1));
    for (i, q) in sets.iter().enumerate() {
        for (j, g) in sets.iter().enumerate() {
            if i != j {
                tasks.push(evaluate_task(q, g)?);
            }
        }
    }
    let average = tasks.iter().map(|t| t.map).sum::<f64>() / tasks.len() as f64;
    Ok(TaskMatrix { tasks, average })
}

/// Results table: a `#` metadata line, a header, one row per task, then the average.
pub fn render_results(matrix: &TaskMatrix, seed: u64, config_digest: &str) -> String {
    let mut out = format!("# seed={seed} config_digest={config_digest}\n");
    out.push_str("query_modality\tgallery_modality\tmap\tqueries\n");
    for t in &matrix.tasks {
        let _ = writeln!(out, "{}\t{}\t{:.6}\t{}", t.query_modality, t.gallery_modality, t.map, t.queries);
    }
    let total: usize = matrix.tasks.iter().map(|t| t.queries).sum();
    let _ = writeln!(out, "average\t-\t{:.6}\t{}", matrix.average, total);
    out
}

/// `recall\tprecision` rows for one task.
pub fn render_pr_curve(task: &TaskResult, seed: u64, config_digest: &str) -> String {
    let mut out = format!(
        "# {}->{} seed={seed} config_digest={config_digest}\nrecall\tprecision\n",
        task.query_modality, task.gallery_modality
    );
    for (r, p) in &task.pr_curve {
        let _ = writeln!(out, "{r:.1}\t{p:.6}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(tag: &str, labels: &[usize], rows: &[Vec<f64>]) -> EmbeddedSet {
        EmbeddedSet::new(
            tag,
            (0..labels.len() as u64).collect(),
            labels.to_vec(),
            DenseMatrix::from_rows(rows).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn cosine_basics() {
        assert!((cosine_similarity(&[0.3, 0.4], &[0.3, 0.4]) - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 2.0]), 0.0);
    }

    #[test]
    fn ap_hand_values() {
        assert!((average_precision(&[true, false, true], 2).unwrap() - 0.833_333_333_333_333_4).abs() < 1e-12);
        assert_eq!(average_precision(&[false, true], 1).unwrap(), 0.5);
        assert_eq!(average_precision(&[true; 5], 5).unwrap(), 1.0);
        assert_eq!(average_precision(&[false, false], 0).unwrap(), 0.0);
        assert!(average_precision(&[true, true], 1).is_err());
    }

    #[test]
    fn ties_break_by_ascending_id() {
        let q = set("a", &[0], &[vec![1.0, 0.0]]);
        let g = EmbeddedSet::new(
            "b",
            vec![9, 3, 5],
            vec![1, 0, 0],
            DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![2.0, 0.0], vec![0.0, 1.0]]).unwrap(),
        )
        .unwrap();
        let r = rank(&q, 0, &g);
        assert_eq!(r.gallery.iter().map(|x| x.0).collect::<Vec<_>>(), vec![3, 9, 5]);
        assert_eq!(r.relevance, vec![true, false, true]);
    }

    #[test]
    fn handcrafted_two_class_task() {
        // query 0 (class 0) ranks gallery [g0 c0 .9, g2 c1 .6, g1 c0 .3, g3 c1 0]
        let q = set("x", &[0, 1], &[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let g = set(
            "y",
            &[0, 0, 1, 1],
            &[vec![0.9, 0.1], vec![0.3, 0.7], vec![0.6, 0.4], vec![0.0, 1.0]],
        );
        let t = evaluate_task(&q, &g).unwrap();
        // query 0: order g0,g2,g1,g3 -> rel 1,0,1,0 -> (1 + 2/3)/2
        // query 1: order g3,g1,g2,g0 -> rel 1,0,1,0 -> (1 + 2/3)/2
        assert!((t.map - 5.0 / 6.0).abs() < 1e-12);
        assert_eq!(t.queries, 2);
        assert_eq!(t.pr_curve.len(), PR_LEVELS);
        assert_eq!(t.pr_curve[0], (0.0, 1.0));
        assert!((t.pr_curve[10].1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn all_relevant_gallery_scores_one() {
        let q = set("x", &[2], &[vec![0.2, 0.8]]);
        let g = set("y", &[2, 2, 2], &[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, 0.5]]);
        assert_eq!(evaluate_task(&q, &g).unwrap().map, 1.0);
    }

    #[test]
    fn empty_sets_are_errors() {
        let q = set("x", &[], &[]);
        let g = set("y", &[0], &[vec![1.0]]);
        assert!(evaluate_task(&q, &g).is_err());
    }

    #[test]
    fn evaluate_all_counts_tasks() {
        let mk = |t: &str| set(t, &[0, 1], &[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let two = evaluate_all(&[mk("a"), mk("b")]).unwrap();
        assert_eq!(two.tasks.len(), 2);
        let five: Vec<_> = ["a", "b", "c", "d", "e"].iter().map(|t| mk(t)).collect();
        let m = evaluate_all(&five).unwrap();
        assert_eq!(m.tasks.len(), 20);
        let mean = m.tasks.iter().map(|t| t.map).sum::<f64>() / 20.0;
        assert!((m.average - mean).abs() < 1e-12);
        assert!(evaluate_all(&five[..1]).is_err());
    }

    #[test]
    fn results_rendering_has_one_row_per_task() {
        let mk = |t: &str| set(t, &[0, 1], &[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let m = evaluate_all(&[mk("a"), mk("b")]).unwrap();
        let text = render_results(&m, 7, "abc");
        assert_eq!(text.lines().count(), 5);
        assert!(text.starts_with("# seed=7 config_digest=abc"));
        assert_eq!(render_pr_curve(&m.tasks[0], 7, "abc").lines().count(), 13);
    }

    fn brute_ap(rel: &[bool], r: usize) -> f64 {
        if r == 0 {
            return 0.0;
        }
        let mut total = 0.0;
        for k in 1..=rel.len() {
            if rel[k - 1] {
                let rk = rel[..k].iter().filter(|&&x| x).count();
                total += rk as f64 / k as f64;
            }
        }
        total / r as f64
    }

    proptest! {
        #[test]
        fn ap_matches_literal_loop(rel in proptest::collection::vec(any::<bool>(), 0..60), extra in 0usize..5) {
            let r = rel.iter().filter(|&&x| x).count() + extra;
            prop_assert_eq!(average_precision(&rel, r).unwrap(), brute_ap(&rel, r));
        }

        #[test]
        fn ap_is_in_unit_interval(rel in proptest::collection::vec(any::<bool>(), 1..40)) {
            let r = rel.iter().filter(|&&x| x).count();
            let ap = average_precision(&rel, r).unwrap();
            prop_assert!((0.0..=1.0).contains(&ap));
        }
    }
}
