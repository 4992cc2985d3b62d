//! Retrieval metrics over a full pairwise distance matrix, k-means NMI and
//! uncertainty-level summaries.
//!
//! Every query ranks all other samples by ascending distance; ties go to the
//! lower sample index.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::metric::{MetricParams, PairMetric, PairedEmbedding};
use crate::mixer::ClassId;

/// Distance used to rank the gallery at test time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestMetric {
    /// Euclidean distance between semantic parts; uncertainty is ignored.
    #[default]
    Euclidean,
    /// Introspective distance.
    Ism,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalIndex {
    pub embeddings: Vec<PairedEmbedding>,
    pub labels: Vec<ClassId>,
    /// Row-major `n x n`, `+inf` on the diagonal.
    pub distances: Vec<f64>,
    pub mode: TestMetric,
}

impl RetrievalIndex {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.distances[i * self.len() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.len();
        &self.distances[i * n..(i + 1) * n]
    }

    /// Every other sample ordered by (distance, index).
    pub fn ranking(&self, query: usize) -> Vec<usize> {
        let row = self.row(query);
        let mut order: Vec<usize> = (0..self.len()).filter(|&j| j != query).collect();
        order.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
        order
    }

    fn relevant_count(&self, query: usize) -> usize {
        let l = self.labels[query];
        self.labels
            .iter()
            .enumerate()
            .filter(|&(j, &c)| j != query && c == l)
            .count()
    }
}

pub fn build_index(
    embeddings: &[PairedEmbedding],
    labels: &[ClassId],
    mode: TestMetric,
    p: &MetricParams,
) -> Result<RetrievalIndex> {
    check_dim("index labels", embeddings.len(), labels.len())?;
    let n = embeddings.len();
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "retrieval index needs at least 2 samples, got {n}"
        )));
    }
    let metric = match mode {
        TestMetric::Euclidean => PairMetric::euclidean(),
        TestMetric::Ism => PairMetric::introspective(*p),
    };
    let mut distances = vec![f64::INFINITY; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = metric.distance(&embeddings[i], &embeddings[j])?;
            distances[i * n + j] = d;
            distances[j * n + i] = d;
        }
    }
    Ok(RetrievalIndex {
        embeddings: embeddings.to_vec(),
        labels: labels.to_vec(),
        distances,
        mode,
    })
}

/// Fraction of queries with at least one same-class sample among their `k`
/// nearest neighbours.
pub fn recall_at_k(index: &RetrievalIndex, k: usize) -> Result<f64> {
    if k == 0 || k >= index.len() {
        return Err(Error::InvalidParameter(format!(
            "k must lie in [1, {}), got {k}",
            index.len()
        )));
    }
    let hits = (0..index.len())
        .filter(|&q| {
            index.ranking(q)[..k]
                .iter()
                .any(|&j| index.labels[j] == index.labels[q])
        })
        .count();
    Ok(hits as f64 / index.len() as f64)
}

// Per-query precision-at-R and average-precision-at-R; queries without any
// same-class gallery sample are skipped.
fn per_query_at_r(index: &RetrievalIndex) -> Vec<(f64, f64)> {
    (0..index.len())
        .filter_map(|q| {
            let r = index.relevant_count(q);
            if r == 0 {
                return None;
            }
            let ranking = index.ranking(q);
            let mut hits = 0usize;
            let mut ap = 0.0;
            for (i, &j) in ranking[..r].iter().enumerate() {
                if index.labels[j] == index.labels[q] {
                    hits += 1;
                    ap += hits as f64 / (i + 1) as f64;
                }
            }
            Some((hits as f64 / r as f64, ap / r as f64))
        })
        .collect()
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

pub fn r_precision(index: &RetrievalIndex) -> f64 {
    mean(per_query_at_r(index).into_iter().map(|(rp, _)| rp))
}

pub fn map_at_r(index: &RetrievalIndex) -> f64 {
    mean(per_query_at_r(index).into_iter().map(|(_, ap)| ap))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KMeansConfig {
    pub restarts: usize,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            restarts: 10,
            max_iters: 300,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(x: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, m) in centroids.iter().enumerate() {
        let d = sq_dist(x, m);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn kmeans_plus_plus(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|x| sq_dist(x, &centroids[0])).collect();
    while centroids.len() < k {
        let next = match WeightedIndex::new(&d2) {
            Ok(w) => w.sample(rng),
            // every point coincides with a centroid
            Err(_) => rng.random_range(0..points.len()),
        };
        centroids.push(points[next].clone());
        for (d, x) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(x, &centroids[centroids.len() - 1]));
        }
    }
    centroids
}

fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>, max_iters: usize) -> KMeansResult {
    let k = centroids.len();
    let dim = points[0].len();
    let mut assignments = vec![usize::MAX; points.len()];
    for _ in 0..max_iters {
        let mut changed = false;
        for (a, x) in assignments.iter_mut().zip(points) {
            let (c, _) = nearest(x, &centroids);
            changed |= *a != c;
            *a = c;
        }
        // an empty cluster takes the point farthest from its own centroid
        let mut counts = vec![0usize; k];
        for &a in &assignments {
            counts[a] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let far = (0..points.len())
                .filter(|&i| counts[assignments[i]] > 1)
                .max_by(|&i, &j| {
                    let di = sq_dist(&points[i], &centroids[assignments[i]]);
                    let dj = sq_dist(&points[j], &centroids[assignments[j]]);
                    di.total_cmp(&dj).then(j.cmp(&i))
                });
            if let Some(i) = far {
                counts[assignments[i]] -= 1;
                assignments[i] = c;
                counts[c] = 1;
                changed = true;
            }
        }
        let mut sums = vec![vec![0.0; dim]; k];
        for (a, x) in assignments.iter().zip(points) {
            for (s, v) in sums[*a].iter_mut().zip(x) {
                *s += v;
            }
        }
        for (c, s) in sums.into_iter().enumerate() {
            if counts[c] > 0 {
                centroids[c] = s.into_iter().map(|v| v / counts[c] as f64).collect();
            }
        }
        if !changed {
            break;
        }
    }
    let inertia = assignments
        .iter()
        .zip(points)
        .map(|(&a, x)| sq_dist(x, &centroids[a]))
        .sum();
    KMeansResult {
        assignments,
        centroids,
        inertia,
    }
}

/// Seeded k-means++ with restarts; the lowest-inertia run wins, earlier runs
/// winning ties.
pub fn kmeans(points: &[Vec<f64>], k: usize, cfg: &KMeansConfig) -> Result<KMeansResult> {
    if k == 0 || k > points.len() {
        return Err(Error::InvalidParameter(format!(
            "k-means needs 1 <= k <= {} points, got k = {k}",
            points.len()
        )));
    }
    let dim = points[0].len();
    for p in points {
        check_dim("k-means point", dim, p.len())?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<KMeansResult> = None;
    for _ in 0..cfg.restarts.max(1) {
        let init = kmeans_plus_plus(points, k, &mut rng);
        let run = lloyd(points, init, cfg.max_iters.max(1));
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// `2 I(A;B) / (H(A) + H(B))` with natural logarithms. Two single-block
/// partitions agree perfectly and score 1.
pub fn nmi_from_assignments<A: Ord + Copy, B: Ord + Copy>(a: &[A], b: &[B]) -> Result<f64> {
    check_dim("nmi labelings", a.len(), b.len())?;
    if a.is_empty() {
        return Err(Error::InvalidParameter("nmi of empty labelings".into()));
    }
    let n = a.len() as f64;
    let mut ca: BTreeMap<A, usize> = BTreeMap::new();
    let mut cb: BTreeMap<B, usize> = BTreeMap::new();
    let mut joint: BTreeMap<(A, B), usize> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *ca.entry(x).or_default() += 1;
        *cb.entry(y).or_default() += 1;
        *joint.entry((x, y)).or_default() += 1;
    }
    let ha = entropy(ca.values().copied(), n);
    let hb = entropy(cb.values().copied(), n);
    if ha + hb == 0.0 {
        return Ok(1.0);
    }
    let mi: f64 = joint
        .iter()
        .map(|(&(x, y), &c)| {
            let pxy = c as f64 / n;
            let px = ca[&x] as f64 / n;
            let py = cb[&y] as f64 / n;
            pxy * (pxy / (px * py)).ln()
        })
        .sum();
    Ok((2.0 * mi / (ha + hb)).clamp(0.0, 1.0))
}

/// k-means on the semantic parts, scored against the labels.
pub fn nmi(index: &RetrievalIndex, n_clusters: usize, cfg: &KMeansConfig) -> Result<f64> {
    let points: Vec<Vec<f64>> = index.embeddings.iter().map(|e| e.semantic.clone()).collect();
    let km = kmeans(&points, n_clusters, cfg)?;
    nmi_from_assignments(&km.assignments, &index.labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
}

impl GroupStats {
    fn from_values(mut v: Vec<f64>) -> Self {
        let count = v.len();
        if count == 0 {
            return Self {
                count,
                mean: 0.0,
                median: 0.0,
            };
        }
        v.sort_by(f64::total_cmp);
        let median = if count % 2 == 1 {
            v[count / 2]
        } else {
            0.5 * (v[count / 2 - 1] + v[count / 2])
        };
        Self {
            count,
            mean: v.iter().sum::<f64>() / count as f64,
            median,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HistogramSpec {
    pub lo: f64,
    pub hi: f64,
    pub bins: usize,
}

impl Default for HistogramSpec {
    fn default() -> Self {
        Self {
            lo: 0.0,
            hi: 2.0,
            bins: 20,
        }
    }
}

impl HistogramSpec {
    pub fn validate(&self) -> Result<()> {
        if self.bins == 0 || !(self.hi > self.lo) {
            return Err(Error::InvalidParameter(format!(
                "histogram needs bins >= 1 and hi > lo, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Out-of-range values land in the end bins.
    pub fn bin(&self, x: f64) -> usize {
        let t = ((x - self.lo) / (self.hi - self.lo) * self.bins as f64).floor();
        t.clamp(0.0, (self.bins - 1) as f64) as usize
    }

    pub fn edges(&self) -> Vec<f64> {
        let w = (self.hi - self.lo) / self.bins as f64;
        (0..=self.bins).map(|i| self.lo + w * i as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyReport {
    pub original: GroupStats,
    pub mixed: GroupStats,
    pub histogram: HistogramSpec,
    pub counts_original: Vec<usize>,
    pub counts_mixed: Vec<usize>,
}

/// Statistics of `||u||` split by whether each sample is mixed.
pub fn uncertainty_report(
    embeddings: &[PairedEmbedding],
    mixed_flags: &[bool],
    hist: &HistogramSpec,
) -> Result<UncertaintyReport> {
    check_dim("uncertainty report flags", embeddings.len(), mixed_flags.len())?;
    hist.validate()?;
    let mut orig = Vec::new();
    let mut mixed = Vec::new();
    let mut counts_original = vec![0; hist.bins];
    let mut counts_mixed = vec![0; hist.bins];
    for (e, &m) in embeddings.iter().zip(mixed_flags) {
        let u = e.uncertainty_norm();
        if m {
            mixed.push(u);
            counts_mixed[hist.bin(u)] += 1;
        } else {
            orig.push(u);
            counts_original[hist.bin(u)] += 1;
        }
    }
    Ok(UncertaintyReport {
        original: GroupStats::from_values(orig),
        mixed: GroupStats::from_values(mixed),
        histogram: *hist,
        counts_original,
        counts_mixed,
    })
}

impl UncertaintyReport {
    pub fn histogram_csv(&self) -> String {
        let edges = self.histogram.edges();
        let mut out = String::from("bin_lo,bin_hi,original,mixed\n");
        for b in 0..self.histogram.bins {
            writeln!(
                out,
                "{:?},{:?},{},{}",
                edges[b], edges[b + 1], self.counts_original[b], self.counts_mixed[b]
            )
            .expect("write to string");
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: TestMetric,
    pub n_queries: usize,
    pub recall: Vec<(usize, f64)>,
    pub nmi: f64,
    pub r_precision: f64,
    pub map_at_r: f64,
    pub uncertainty: UncertaintyReport,
}

impl EvalReport {
    pub fn recall_at(&self, k: usize) -> Option<f64> {
        self.recall.iter().find(|(kk, _)| *kk == k).map(|(_, v)| *v)
    }

    /// One `key=value` record per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mode = match self.mode {
            TestMetric::Euclidean => "euclidean",
            TestMetric::Ism => "ism",
        };
        let mut line = |k: &str, v: String| writeln!(out, "{k}={v}").expect("write to string");
        line("test_metric", mode.to_string());
        line("n_queries", self.n_queries.to_string());
        for (k, v) in &self.recall {
            line(&format!("recall@{k}"), format!("{v:?}"));
        }
        line("nmi", format!("{:?}", self.nmi));
        line("r_precision", format!("{:?}", self.r_precision));
        line("map_at_r", format!("{:?}", self.map_at_r));
        let u = &self.uncertainty;
        for (name, g) in [("original", u.original), ("mixed", u.mixed)] {
            line(&format!("u_norm_{name}_count"), g.count.to_string());
            line(&format!("u_norm_{name}_mean"), format!("{:?}", g.mean));
            line(&format!("u_norm_{name}_median"), format!("{:?}", g.median));
        }
        out
    }
}

/// Parses `key=value` lines back into a map.
pub fn parse_metrics_text(text: &str) -> Result<BTreeMap<String, String>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Error::Parse {
                    line: i + 1,
                    message: "expected key=value".into(),
                })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub test_metric: TestMetric,
    pub recall_ks: Vec<usize>,
    pub kmeans: KMeansConfig,
    pub histogram: HistogramSpec,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            test_metric: TestMetric::Euclidean,
            recall_ks: vec![1, 2, 4, 8],
            kmeans: KMeansConfig::default(),
            histogram: HistogramSpec::default(),
        }
    }
}

/// Builds the index and computes every metric. Recall cut-offs not below the
/// sample count are dropped. The uncertainty summary is taken over
/// `uncertainty_source`, which may be a different sample set (typically the
/// training split, where the mixed samples live).
pub fn evaluate_embeddings(
    embeddings: &[PairedEmbedding],
    labels: &[ClassId],
    p: &MetricParams,
    cfg: &EvalConfig,
    uncertainty_source: (&[PairedEmbedding], &[bool]),
) -> Result<EvalReport> {
    let index = build_index(embeddings, labels, cfg.test_metric, p)?;
    let recall = cfg
        .recall_ks
        .iter()
        .filter(|&&k| k >= 1 && k < index.len())
        .map(|&k| Ok((k, recall_at_k(&index, k)?)))
        .collect::<Result<Vec<_>>>()?;
    let n_classes = labels.iter().collect::<std::collections::BTreeSet<_>>().len();
    Ok(EvalReport {
        mode: cfg.test_metric,
        n_queries: index.len(),
        recall,
        nmi: nmi(&index, n_classes, &cfg.kmeans)?,
        r_precision: r_precision(&index),
        map_at_r: map_at_r(&index),
        uncertainty: uncertainty_report(uncertainty_source.0, uncertainty_source.1, &cfg.histogram)?,
    })
}
