//! Multi-aspect explanations: group a query's paths into clusters, scale
//! their scores to [0, 1] and project the embeddings to 2D.

use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{cosine, EmbedError, Embedder, ScoredTriplet};
use crate::graph::{KnowledgeGraph, Triplet};
use crate::metrics::csv_field;
use crate::paths::ReasoningPath;
use crate::scalar::Real;
use crate::verbalize::Verbalizer;

pub const DEFAULT_CLUSTERS: usize = 4;
/// The empty-path entry is added only when fewer paths than this were found.
pub const EMPTY_PATH_RULE: usize = 20;
pub const LDA_EPSILON: f64 = 1e-6;
pub const KMEANS_MAX_ITER: usize = 100;
pub const KMEANS_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("no entries to explain")]
    Empty,
    #[error("k must be >= 1")]
    ZeroClusters,
    #[error("k = {k} exceeds the number of points ({n})")]
    TooManyClusters { k: usize, n: usize },
    #[error("points have inconsistent dimensions")]
    Ragged,
    #[error("projection needs at least 2 distinct labels")]
    SingleLabel,
    #[error("projection needs at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("labels and points differ in length")]
    LabelCount,
    #[error("within-class scatter is not positive definite")]
    Numerical,
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// `(s - min) / (max - min)`; all-equal input maps to 0.5 and sets the flag.
pub fn minmax_scale<T: Real>(scores: &[T]) -> Result<(Vec<T>, bool), ExplainError> {
    if scores.is_empty() {
        return Err(ExplainError::Empty);
    }
    let lo = scores.iter().copied().fold(T::infinity(), T::min);
    let hi = scores.iter().copied().fold(T::neg_infinity(), T::max);
    if hi == lo {
        return Ok((vec![T::of(0.5); scores.len()], true));
    }
    let span = hi - lo;
    Ok((scores.iter().map(|s| (*s - lo) / span).collect(), false))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub sse: f64,
    /// SSE after seeding and after every Lloyd or refinement pass.
    pub sse_trace: Vec<f64>,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn sse(points: &[Vec<f64>], labels: &[usize], centroids: &[Vec<f64>]) -> f64 {
    points.iter().zip(labels).map(|(p, &l)| sq_dist(p, &centroids[l])).sum()
}

/// SSE of a partition with each cluster at its mean.
pub fn partition_sse(points: &[Vec<f64>], labels: &[usize], k: usize) -> f64 {
    let c = means(points, labels, k, None);
    sse(points, labels, &c)
}

fn means(points: &[Vec<f64>], labels: &[usize], k: usize, previous: Option<&[Vec<f64>]>) -> Vec<Vec<f64>> {
    let dim = points[0].len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels) {
        counts[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(p) {
            *s += v;
        }
    }
    sums.into_iter()
        .zip(&counts)
        .enumerate()
        .map(|(j, (s, &n))| match (n, previous) {
            (0, Some(prev)) => prev[j].clone(),
            (0, None) => vec![0.0; dim],
            _ => s.into_iter().map(|v| v / n as f64).collect(),
        })
        .collect()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    best
}

fn seed_plus_plus(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, w) in d2.iter().enumerate() {
                if r < *w {
                    pick = i;
                    break;
                }
                r -= w;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centroids.push(points[pick].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, centroids.last().expect("pushed")));
        }
    }
    centroids
}

/// Moves the point farthest from its centroid (taken from a cluster that
/// keeps at least one member) into each empty cluster.
fn repair_empty(points: &[Vec<f64>], labels: &mut [usize], centroids: &mut [Vec<f64>]) {
    let k = centroids.len();
    loop {
        let mut counts = vec![0usize; k];
        for &l in labels.iter() {
            counts[l] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let far = (0..points.len())
            .filter(|&i| counts[labels[i]] > 1)
            .max_by(|&a, &b| {
                sq_dist(&points[a], &centroids[labels[a]])
                    .total_cmp(&sq_dist(&points[b], &centroids[labels[b]]))
                    .then(b.cmp(&a))
            })
            .expect("k <= n leaves a cluster with two members");
        labels[far] = empty;
        centroids[empty] = points[far].clone();
    }
}

/// One Hartigan pass: applies every single-point move that lowers SSE.
/// Returns whether anything moved.
fn hartigan_pass(points: &[Vec<f64>], labels: &mut [usize], centroids: &mut [Vec<f64>], counts: &mut [usize]) -> bool {
    let mut moved = false;
    for i in 0..points.len() {
        let a = labels[i];
        if counts[a] <= 1 {
            continue;
        }
        let na = counts[a] as f64;
        let cost_out = na / (na - 1.0) * sq_dist(&points[i], &centroids[a]);
        let mut best: Option<(usize, f64)> = None;
        for b in 0..centroids.len() {
            if b == a {
                continue;
            }
            let nb = counts[b] as f64;
            let cost_in = nb / (nb + 1.0) * sq_dist(&points[i], &centroids[b]);
            let gain = cost_out - cost_in;
            if gain > 1e-12 * (1.0 + cost_out) && best.is_none_or(|(_, g)| gain > g) {
                best = Some((b, gain));
            }
        }
        if let Some((b, _)) = best {
            let p = &points[i];
            let (na, nb) = (counts[a] as f64, counts[b] as f64);
            for (c, v) in centroids[a].iter_mut().zip(p) {
                *c = (*c * na - v) / (na - 1.0);
            }
            for (c, v) in centroids[b].iter_mut().zip(p) {
                *c = (*c * nb + v) / (nb + 1.0);
            }
            counts[a] -= 1;
            counts[b] += 1;
            labels[i] = b;
            moved = true;
        }
    }
    moved
}

/// k-means++ seeding, Lloyd iterations until the largest centroid shift is
/// below 1e-6 (or 100 iterations), then single-point refinement so that no
/// one reassignment can lower SSE.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeansResult, ExplainError> {
    let n = points.len();
    if k == 0 {
        return Err(ExplainError::ZeroClusters);
    }
    if k > n {
        return Err(ExplainError::TooManyClusters { k, n });
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(ExplainError::Ragged);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_plus_plus(points, k, &mut rng);
    let mut labels: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
    repair_empty(points, &mut labels, &mut centroids);
    let mut trace = vec![sse(points, &labels, &centroids)];
    let mut iterations = 0;

    while iterations < KMEANS_MAX_ITER {
        iterations += 1;
        let next = means(points, &labels, k, Some(&centroids));
        let shift = next.iter().zip(&centroids).map(|(a, b)| sq_dist(a, b).sqrt()).fold(0.0, f64::max);
        centroids = next;
        for (l, p) in labels.iter_mut().zip(points) {
            let j = nearest(p, &centroids);
            // keep the current cluster on exact ties
            if sq_dist(p, &centroids[j]) < sq_dist(p, &centroids[*l]) {
                *l = j;
            }
        }
        repair_empty(points, &mut labels, &mut centroids);
        trace.push(sse(points, &labels, &centroids));
        if shift < KMEANS_TOL {
            break;
        }
    }

    centroids = means(points, &labels, k, Some(&centroids));
    let mut counts = vec![0usize; k];
    for &l in &labels {
        counts[l] += 1;
    }
    trace.push(sse(points, &labels, &centroids));
    for _ in 0..n * k + 1 {
        if !hartigan_pass(points, &mut labels, &mut centroids, &mut counts) {
            break;
        }
        centroids = means(points, &labels, k, Some(&centroids));
        trace.push(sse(points, &labels, &centroids));
    }

    debug_assert!(trace.windows(2).all(|w| w[1] <= w[0] + 1e-9 * (1.0 + w[0])), "SSE increased: {trace:?}");
    let final_sse = sse(points, &labels, &centroids);
    Ok(KMeansResult { labels, centroids, sse: final_sse, sse_trace: trace, iterations })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaProjection {
    pub coords: Vec<[f64; 2]>,
    /// Unit projection axes in input space.
    pub axes: [Vec<f64>; 2],
    /// How many of the two axes are Fisher discriminants (the rest come from
    /// residual principal components).
    pub discriminants: usize,
}

fn scatter(points: &[Vec<f64>], labels: &[usize]) -> (DMatrix<f64>, DMatrix<f64>, DVector<f64>) {
    let d = points[0].len();
    let classes = labels.iter().copied().max().unwrap_or(0) + 1;
    let x: Vec<DVector<f64>> = points.iter().map(|p| DVector::from_column_slice(p)).collect();
    let mean = x.iter().fold(DVector::zeros(d), |acc, v| acc + v) / x.len() as f64;
    let mut class_sum = vec![DVector::zeros(d); classes];
    let mut class_n = vec![0usize; classes];
    for (v, &l) in x.iter().zip(labels) {
        class_sum[l] += v;
        class_n[l] += 1;
    }
    let class_mean: Vec<DVector<f64>> = class_sum
        .into_iter()
        .zip(&class_n)
        .map(|(s, &n)| if n > 0 { s / n as f64 } else { DVector::zeros(d) })
        .collect();
    let mut sw = DMatrix::zeros(d, d);
    for (v, &l) in x.iter().zip(labels) {
        let dv = v - &class_mean[l];
        sw += &dv * dv.transpose();
    }
    let mut sb = DMatrix::zeros(d, d);
    for (m, &n) in class_mean.iter().zip(&class_n) {
        if n > 0 {
            let dm = m - &mean;
            sb += (&dm * dm.transpose()) * n as f64;
        }
    }
    (sw, sb, mean)
}

/// Fixes the sign so the largest-magnitude component is positive.
fn canonical_sign(mut v: DVector<f64>) -> DVector<f64> {
    let norm = v.norm();
    if norm > 0.0 {
        v /= norm;
    }
    let pivot = v.iter().copied().fold(0.0f64, |a, b| if b.abs() > a.abs() + 1e-12 { b } else { a });
    if pivot < 0.0 {
        v = -v;
    }
    v
}

fn top_eigenvectors(m: &DMatrix<f64>, count: usize) -> Result<Vec<(f64, DVector<f64>)>, ExplainError> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    if eig.eigenvalues.iter().chain(eig.eigenvectors.iter()).any(|v| !v.is_finite()) {
        return Err(ExplainError::Numerical);
    }
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    Ok(order.into_iter().take(count).map(|i| (eig.eigenvalues[i], eig.eigenvectors.column(i).into_owned())).collect())
}

/// Fisher ratio `wᵀ Sb w / wᵀ (Sw + εI) w` of a direction.
pub fn fisher_ratio(points: &[Vec<f64>], labels: &[usize], direction: &[f64]) -> f64 {
    let (sw, sb, _) = scatter(points, labels);
    let w = DVector::from_column_slice(direction);
    let within = (w.transpose() * &sw * &w)[(0, 0)] + LDA_EPSILON * w.norm_squared();
    (w.transpose() * &sb * &w)[(0, 0)] / within
}

/// Orthonormal basis (columns) of the span of the centered points.
fn data_basis(centered: &[DVector<f64>], d: usize) -> Result<DMatrix<f64>, ExplainError> {
    let x = DMatrix::from_columns(centered);
    let gram = x.transpose() * &x;
    let pairs = top_eigenvectors(&gram, centered.len())?;
    let top = pairs.first().map_or(0.0, |p| p.0);
    let cols: Vec<DVector<f64>> = pairs
        .into_iter()
        .filter(|(l, _)| *l > 1e-12 * top.max(f64::MIN_POSITIVE))
        .map(|(l, v)| (&x * v) / l.sqrt())
        .collect();
    Ok(if cols.is_empty() { DMatrix::zeros(d, 0) } else { DMatrix::from_columns(&cols) })
}

/// Two-dimensional Fisher discriminant projection with cluster labels as
/// classes. With fewer than two discriminants the second axis is the top
/// principal component of the data after removing the first axis.
///
/// The problem is solved inside the span of the centered data: directions
/// orthogonal to it add nothing to Sb and only ε to Sw.
pub fn lda_project(points: &[Vec<f64>], labels: &[usize]) -> Result<LdaProjection, ExplainError> {
    if points.len() != labels.len() {
        return Err(ExplainError::LabelCount);
    }
    let mut distinct = labels.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(ExplainError::SingleLabel);
    }
    if points.len() < 3 {
        return Err(ExplainError::TooFewPoints(points.len()));
    }
    let d = points[0].len();
    if points.iter().any(|p| p.len() != d) {
        return Err(ExplainError::Ragged);
    }
    // dense relabeling so label names do not matter
    let dense: Vec<usize> = labels.iter().map(|l| distinct.binary_search(l).expect("present")).collect();
    let n = points.len() as f64;
    let mean = points.iter().fold(DVector::zeros(d), |acc, p| acc + DVector::from_column_slice(p)) / n;
    let centered: Vec<DVector<f64>> = points.iter().map(|p| DVector::from_column_slice(p) - &mean).collect();
    let q = data_basis(&centered, d)?;
    let r = q.ncols();
    let reduced: Vec<Vec<f64>> = centered.iter().map(|x| (q.transpose() * x).as_slice().to_vec()).collect();

    let mut axes: Vec<DVector<f64>> = Vec::new();
    if r > 0 {
        let (sw, sb, _) = scatter(&reduced, &dense);
        let reg = sw + DMatrix::identity(r, r) * LDA_EPSILON;
        let l_inv = reg.cholesky().ok_or(ExplainError::Numerical)?.l().try_inverse().ok_or(ExplainError::Numerical)?;
        let m = &l_inv * &sb * l_inv.transpose();
        let wanted = (distinct.len() - 1).min(r).min(2);
        for (_, y) in top_eigenvectors(&m, wanted)? {
            axes.push(canonical_sign(&q * (l_inv.transpose() * y)));
        }
    }
    let discriminants = axes.len();

    while axes.len() < 2 {
        let mut next = DVector::zeros(d);
        if r > axes.len() {
            let z: Vec<DVector<f64>> = centered
                .iter()
                .map(|x| {
                    let mut res = x.clone();
                    for a in &axes {
                        res -= a * a.dot(x);
                    }
                    q.transpose() * res
                })
                .collect();
            let zm = DMatrix::from_columns(&z);
            let (_, v) = top_eigenvectors(&(&zm * zm.transpose()), 1)?.remove(0);
            let mut v = &q * v;
            for a in &axes {
                v -= a * a.dot(&v);
            }
            if v.norm() > 1e-12 {
                next = canonical_sign(v);
            }
        }
        axes.push(next);
    }
    let coords = centered.iter().map(|x| [axes[0].dot(x), axes[1].dot(x)]).collect();
    let axes = [axes[0].as_slice().to_vec(), axes[1].as_slice().to_vec()];
    Ok(LdaProjection { coords, axes, discriminants })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryKeys {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

impl QueryKeys {
    pub fn of(t: &Triplet, g: &KnowledgeGraph) -> Self {
        QueryKeys {
            head: g.entity_key(t.head).to_owned(),
            relation: g.relation_label(t.relation),
            tail: g.entity_key(t.tail).to_owned(),
        }
    }
}

/// Alternating entity keys and relation labels; `None` for the empty path.
pub fn path_keys(p: &ReasoningPath, g: &KnowledgeGraph) -> Vec<String> {
    let mut out = vec![g.entity_key(p.entities[0]).to_owned()];
    for (r, e) in p.relations.iter().zip(&p.entities[1..]) {
        out.push(g.relation_label(*r));
        out.push(g.entity_key(*e).to_owned());
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry<T> {
    pub path: Option<Vec<String>>,
    pub sentence: String,
    pub raw_score: T,
    pub scaled_score: T,
    pub cluster: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationReport<T> {
    pub query: QueryKeys,
    pub k: usize,
    pub entries: Vec<ReportEntry<T>>,
    /// Empty when the projection was skipped.
    pub coords: Vec<[f64; 2]>,
    pub scaling_degenerate: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub projection_skipped: Option<String>,
    pub sse: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReportOptions {
    pub k: usize,
    pub max_paths_for_empty_rule: usize,
    pub seed: u64,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions { k: DEFAULT_CLUSTERS, max_paths_for_empty_rule: EMPTY_PATH_RULE, seed: 42 }
    }
}

/// Builds the explanation for one scored query. `k` is clamped to the number
/// of entries.
pub fn build_report<T: Real, E: Embedder<T> + ?Sized>(
    g: &KnowledgeGraph,
    scored: &ScoredTriplet<T>,
    backend: &E,
    verbalizer: &Verbalizer,
    options: ReportOptions,
) -> Result<ExplanationReport<T>, ExplainError> {
    let mut paths: Vec<Option<&ReasoningPath>> = scored.paths.iter().map(Some).collect();
    if scored.paths.len() < options.max_paths_for_empty_rule {
        paths.push(None);
    }
    if paths.is_empty() {
        return Err(ExplainError::Empty);
    }
    let sentences: Vec<String> = paths
        .iter()
        .map(|p| match p {
            Some(p) => verbalizer.path_sentence(p, g).text,
            None => verbalizer.empty_path_sentence().text,
        })
        .collect();
    let mut texts = vec![verbalizer.triplet_sentence(&scored.triplet, g).text];
    texts.extend(sentences.iter().cloned());
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    let embeddings = backend.embed_batch(&refs)?;
    let (anchor, rest) = embeddings.split_first().expect("query embedding");
    let raw: Vec<T> = rest.iter().map(|e| cosine(anchor, e).map(|s| s.value)).collect::<Result<_, _>>()?;
    let (scaled, scaling_degenerate) = minmax_scale(&raw)?;

    let points: Vec<Vec<f64>> = rest.iter().map(|e| e.values.iter().map(|v| v.as_f64()).collect()).collect();
    let k = options.k.max(1).min(points.len());
    let clusters = kmeans(&points, k, options.seed)?;
    let (coords, projection_skipped) = match lda_project(&points, &clusters.labels) {
        Ok(p) => (p.coords, None),
        Err(e @ (ExplainError::SingleLabel | ExplainError::TooFewPoints(_) | ExplainError::Numerical)) => {
            (Vec::new(), Some(e.to_string()))
        }
        Err(e) => return Err(e),
    };

    let entries = paths
        .iter()
        .zip(sentences)
        .enumerate()
        .map(|(i, (p, sentence))| ReportEntry {
            path: p.map(|p| path_keys(p, g)),
            sentence,
            raw_score: raw[i],
            scaled_score: scaled[i],
            cluster: clusters.labels[i],
        })
        .collect();
    Ok(ExplanationReport {
        query: QueryKeys::of(&scored.triplet, g),
        k,
        entries,
        coords,
        scaling_degenerate,
        projection_skipped,
        sse: clusters.sse,
    })
}

impl<T: Real + Serialize> ExplanationReport<T> {
    pub fn write_json<W: Write>(&self, mut w: W) -> Result<(), ExplainError> {
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n")?;
        Ok(())
    }

    /// Plot-ready rows `x,y,cluster,scaled_score,label`; x and y are blank
    /// when the projection was skipped.
    pub fn write_plot_csv<W: Write>(&self, mut w: W) -> Result<(), ExplainError> {
        writeln!(w, "x,y,cluster,scaled_score,label")?;
        for (i, e) in self.entries.iter().enumerate() {
            let (x, y) = match self.coords.get(i) {
                Some([x, y]) => (x.to_string(), y.to_string()),
                None => (String::new(), String::new()),
            };
            writeln!(w, "{x},{y},{},{},{}", e.cluster, e.scaled_score, csv_field(&e.sentence))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::HashingEmbedder;

    #[test]
    fn minmax_examples() {
        let (s, flag) = minmax_scale(&[0.2f64, 0.6, 1.0]).unwrap();
        assert!(!flag);
        for (a, b) in s.iter().zip([0.0, 0.5, 1.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(minmax_scale(&[0.3f32; 3]).unwrap(), (vec![0.5; 3], true));
        assert!(matches!(minmax_scale::<f64>(&[]), Err(ExplainError::Empty)));
    }

    #[test]
    fn kmeans_separates_blobs() {
        let pts = vec![vec![0.0, 0.0], vec![10.0, 10.0], vec![0.1, 0.0], vec![10.0, 10.1]];
        let r = kmeans(&pts, 2, 42).unwrap();
        assert_eq!(r.labels[0], r.labels[2]);
        assert_eq!(r.labels[1], r.labels[3]);
        assert_ne!(r.labels[0], r.labels[1]);
    }

    #[test]
    fn kmeans_k_equals_n() {
        let pts = vec![vec![0.0], vec![1.0], vec![5.0]];
        let r = kmeans(&pts, 3, 42).unwrap();
        assert_eq!(r.sse, 0.0);
        let mut l = r.labels.clone();
        l.sort();
        assert_eq!(l, vec![0, 1, 2]);
    }

    #[test]
    fn kmeans_duplicates_and_errors() {
        let pts = vec![vec![1.0, 1.0]; 4];
        let r = kmeans(&pts, 3, 7).unwrap();
        assert_eq!(r.sse, 0.0);
        let mut l = r.labels.clone();
        l.sort();
        l.dedup();
        assert_eq!(l.len(), 3);
        assert!(matches!(kmeans(&pts, 5, 1), Err(ExplainError::TooManyClusters { k: 5, n: 4 })));
        assert!(matches!(kmeans(&pts, 0, 1), Err(ExplainError::ZeroClusters)));
    }

    #[test]
    fn lda_collapsed_classes() {
        let pts = vec![vec![0.0, 0.0, 0.0], vec![0.0, 0.0, 0.0], vec![1.0, 2.0, 0.0], vec![1.0, 2.0, 0.0]];
        let p = lda_project(&pts, &[0, 0, 1, 1]).unwrap();
        assert_eq!(p.discriminants, 1);
        assert!((p.coords[0][0] - p.coords[1][0]).abs() < 1e-9);
        assert!((p.coords[2][0] - p.coords[3][0]).abs() < 1e-9);
        assert!((p.coords[0][0] - p.coords[2][0]).abs() > 0.5);
        assert!(matches!(lda_project(&pts, &[1, 1, 1, 1]), Err(ExplainError::SingleLabel)));
        assert!(matches!(lda_project(&pts[..2], &[0, 1]), Err(ExplainError::TooFewPoints(2))));
    }

    #[test]
    fn lda_label_names_do_not_matter() {
        let pts: Vec<Vec<f64>> =
            (0..9).map(|i| vec![(i % 3) as f64 * 3.0 + i as f64 * 0.1, (i * i % 5) as f64, 1.0]).collect();
        let labels: Vec<usize> = (0..9).map(|i| i % 3).collect();
        let renamed: Vec<usize> = labels.iter().map(|l| [7, 2, 4][*l]).collect();
        let a = lda_project(&pts, &labels).unwrap();
        let b = lda_project(&pts, &renamed).unwrap();
        for (x, y) in a.coords.iter().zip(&b.coords) {
            assert!((x[0].abs() - y[0].abs()).abs() < 1e-6);
            assert!((x[1].abs() - y[1].abs()).abs() < 1e-6);
        }
    }

    fn chain_graph() -> (KnowledgeGraph, Triplet, Vec<ReasoningPath>) {
        let mut triplets = vec![("q", "r", "t")];
        let mids: Vec<String> = (0..25).map(|i| format!("m{i}")).collect();
        for m in &mids {
            triplets.push(("q", "p", m.as_str()));
            triplets.push((m.as_str(), "s", "t"));
        }
        let g = KnowledgeGraph::from_triplets(triplets);
        let query = g.triplet("q", "r", "t").unwrap();
        let paths = mids
            .iter()
            .map(|m| {
                let e = g.entity(m).unwrap();
                ReasoningPath {
                    entities: vec![query.head, e, query.tail],
                    relations: vec![g.relation("p").unwrap(), g.relation("s").unwrap()],
                }
            })
            .collect();
        (g, query, paths)
    }

    fn scored(query: Triplet, paths: Vec<ReasoningPath>) -> ScoredTriplet<f64> {
        let n = paths.len();
        ScoredTriplet { triplet: query, paths, per_path_scores: vec![0.0; n], score: 0.0, best_path_index: None }
    }

    #[test]
    fn empty_path_rule_threshold() {
        let (g, q, paths) = chain_graph();
        let h = HashingEmbedder::default();
        let v = Verbalizer::default();
        let opts = ReportOptions::default();
        let r20 = build_report(&g, &scored(q, paths[..20].to_vec()), &h, &v, opts).unwrap();
        assert_eq!(r20.entries.len(), 20);
        assert!(r20.entries.iter().all(|e| e.path.is_some()));
        let r19 = build_report(&g, &scored(q, paths[..19].to_vec()), &h, &v, opts).unwrap();
        assert_eq!(r19.entries.len(), 20);
        assert!(r19.entries[19].path.is_none());
        assert_eq!(r19.entries[19].sentence, "(no path)");
        assert_eq!(r19.coords.len(), 20);
        assert!(r19.entries.iter().all(|e| e.cluster < r19.k));
    }

    #[test]
    fn single_path_degenerate_report() {
        let (g, q, paths) = chain_graph();
        let opts = ReportOptions { k: 1, max_paths_for_empty_rule: 1, seed: 42 };
        let r = build_report(
            &g,
            &scored(q, paths[..1].to_vec()),
            &HashingEmbedder::default(),
            &Verbalizer::default(),
            opts,
        )
        .unwrap();
        assert_eq!(r.entries.len(), 1);
        assert_eq!(r.entries[0].cluster, 0);
        assert_eq!(r.entries[0].scaled_score, 0.5);
        assert!(r.scaling_degenerate);
        assert!(r.coords.is_empty() && r.projection_skipped.is_some());
    }

    #[test]
    fn report_round_trips() {
        let (g, q, paths) = chain_graph();
        let r = build_report(
            &g,
            &scored(q, paths[..7].to_vec()),
            &HashingEmbedder::default(),
            &Verbalizer::default(),
            ReportOptions::default(),
        )
        .unwrap();
        let mut buf = Vec::new();
        r.write_json(&mut buf).unwrap();
        let back: ExplanationReport<f64> = serde_json::from_slice(&buf).unwrap();
        assert_eq!(back, r);
        let mut csv = Vec::new();
        r.write_plot_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 9);
    }
}
