use crate::error::Result;
use crate::metric::{scatter_pair, PairMetric, PairedEmbedding, Partials};
use crate::mixer::{label_equal, LabelSet};
use crate::sampler::{anchor_rng, semi_hard_from_row, MiningConfig, NegativeDistribution};

use super::{
    check_batch, log1p_sum_exp, EmbeddingGrads, LossConfig, LossOutput, LossWarning, Mining,
};

fn distance_matrix(batch: &[PairedEmbedding], metric: &PairMetric) -> Vec<Vec<f64>> {
    let n = batch.len();
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = metric.distance_parts(&batch[i], &batch[j]).value;
            m[i][j] = d;
            m[j][i] = d;
        }
    }
    m
}

fn positives_of(anchor: usize, labels: &[LabelSet]) -> impl Iterator<Item = usize> + '_ {
    (0..labels.len()).filter(move |&p| p != anchor && label_equal(&labels[anchor], &labels[p]))
}

fn add_distance(
    grads: &mut EmbeddingGrads,
    batch: &[PairedEmbedding],
    i: usize,
    j: usize,
    parts: &Partials,
    weight: f64,
) {
    let (gi, gj) = grads.two(i, j);
    scatter_pair(&batch[i], &batch[j], parts, false, weight, gi, gj);
}

/// For every ordered anchor-positive pair, draws one negative for the anchor
/// by distance-weighted sampling.
pub fn mine_margin_pairs(
    batch: &[PairedEmbedding],
    labels: &[LabelSet],
    metric: &PairMetric,
    cfg: &MiningConfig,
) -> Result<Mining> {
    check_batch(batch, labels)?;
    cfg.validate()?;
    let dist = distance_matrix(batch, metric);
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for a in 0..batch.len() {
        let pos: Vec<usize> = positives_of(a, labels).collect();
        if pos.is_empty() {
            continue;
        }
        let sampler = match NegativeDistribution::from_row(&dist[a], a, labels, cfg) {
            Ok(s) => Some(s),
            Err(crate::Error::NoNegatives(_)) => None,
            Err(e) => return Err(e),
        };
        let mut rng = anchor_rng(cfg.rng_seed, a);
        for p in pos {
            positives.push((a, p));
            if let Some(s) = &sampler {
                negatives.push((a, s.sample(&mut rng)));
            }
        }
    }
    Ok(Mining::MarginPairs {
        positives,
        negatives,
    })
}

pub(super) fn margin_from_pairs(
    batch: &[PairedEmbedding],
    metric: &PairMetric,
    cfg: &LossConfig,
    positives: &[(usize, usize)],
    negatives: &[(usize, usize)],
) -> LossOutput {
    let mut out = LossOutput::new(batch, None);
    let neg_sign = if cfg.fidelity_mode { -1.0 } else { 1.0 };
    for &(i, j) in positives {
        let parts = metric.distance_parts(&batch[i], &batch[j]);
        let arg = parts.value - cfg.xi;
        out.touch_kink(arg);
        if arg > 0.0 {
            out.value += arg;
            add_distance(&mut out.grads, batch, i, j, &parts, 1.0);
        }
    }
    for &(i, j) in negatives {
        let parts = metric.distance_parts(&batch[i], &batch[j]);
        let arg = cfg.omega - parts.value;
        out.touch_kink(arg);
        if arg > 0.0 {
            out.value += neg_sign * arg;
            add_distance(&mut out.grads, batch, i, j, &parts, -neg_sign);
        }
    }
    if negatives.is_empty() {
        out.warnings.push(LossWarning::SingleClassBatch);
    }
    out
}

/// Margin loss with distance-weighted negative sampling:
/// `sum_pos [D - xi]_+ + sum_neg [omega - D]_+`.
pub fn margin_dw_loss(
    batch: &[PairedEmbedding],
    labels: &[LabelSet],
    metric: &PairMetric,
    cfg: &LossConfig,
    mining: &MiningConfig,
) -> Result<LossOutput> {
    match mine_margin_pairs(batch, labels, metric, mining)? {
        Mining::MarginPairs {
            positives,
            negatives,
        } => Ok(margin_from_pairs(batch, metric, cfg, &positives, &negatives)),
        _ => unreachable!(),
    }
}

/// Semi-hard triplets over every ordered anchor-positive pair.
pub fn mine_triplets(
    batch: &[PairedEmbedding],
    labels: &[LabelSet],
    metric: &PairMetric,
) -> Mining {
    let dist = distance_matrix(batch, metric);
    let mut triplets = Vec::new();
    for a in 0..batch.len() {
        for p in positives_of(a, labels) {
            if let Some(n) = semi_hard_from_row(&dist[a], a, p, labels) {
                triplets.push((a, p, n));
            }
        }
    }
    Mining::Triplets(triplets)
}

pub(super) fn triplet_from_mining(
    batch: &[PairedEmbedding],
    metric: &PairMetric,
    cfg: &LossConfig,
    triplets: &[(usize, usize, usize)],
) -> LossOutput {
    let mut out = LossOutput::new(batch, None);
    if triplets.is_empty() {
        out.warnings.push(LossWarning::NoValidTriplets);
    }
    for &(a, p, n) in triplets {
        let ap = metric.distance_parts(&batch[a], &batch[p]);
        let an = metric.distance_parts(&batch[a], &batch[n]);
        let arg = ap.value - an.value + cfg.triplet_delta;
        out.touch_kink(arg);
        if arg > 0.0 {
            out.value += arg;
            add_distance(&mut out.grads, batch, a, p, &ap, 1.0);
            add_distance(&mut out.grads, batch, a, n, &an, -1.0);
        }
    }
    out
}

/// `sum_triplets [D(a,p) - D(a,n) + delta]_+` with semi-hard negatives.
pub fn triplet_semihard_loss(
    batch: &[PairedEmbedding],
    labels: &[LabelSet],
    metric: &PairMetric,
    cfg: &LossConfig,
) -> Result<LossOutput> {
    check_batch(batch, labels)?;
    match mine_triplets(batch, labels, metric) {
        Mining::Triplets(t) => Ok(triplet_from_mining(batch, metric, cfg, &t)),
        _ => unreachable!(),
    }
}

pub(super) fn contrastive_all_pairs(
    batch: &[PairedEmbedding],
    labels: &[LabelSet],
    metric: &PairMetric,
    cfg: &LossConfig,
) -> LossOutput {
    let mut out = LossOutput::new(batch, None);
    let mut any_negative = false;
    for i in 0..batch.len() {
        for j in i + 1..batch.len() {
            let parts = metric.distance_parts(&batch[i], &batch[j]);
            if label_equal(&labels[i], &labels[j]) {
                out.value += parts.value;
                add_distance(&mut out.grads, batch, i, j, &parts, 1.0);
            } else {
                any_negative = true;
                let arg = cfg.contrastive_delta - parts.value;
                out.touch_kink(arg);
                if arg > 0.0 {
                    out.value += arg;
                    add_distance(&mut out.grads, batch, i, j, &parts, -1.0);
                }
            }
        }
    }
    if !any_negative {
        out.warnings.push(LossWarning::SingleClassBatch);
    }
    out
}

/// `sum_pos D + sum_neg [delta - D]_+` over all unordered pairs.
pub fn contrastive_loss(
    batch: &[PairedEmbedding],
    labels: &[LabelSet],
    metric: &PairMetric,
    cfg: &LossConfig,
) -> Result<LossOutput> {
    check_batch(batch, labels)?;
    Ok(contrastive_all_pairs(batch, labels, metric, cfg))
}

/// Multi-similarity pair filtering: a negative is kept when it is more
/// similar than the least similar positive minus `epsilon`; a positive is
/// kept when it is less similar than the most similar negative plus
/// `epsilon`.
pub fn mine_multi_similarity(
    batch: &[PairedEmbedding],
    labels: &[LabelSet],
    metric: &PairMetric,
    cfg: &LossConfig,
) -> Result<Mining> {
    check_batch(batch, labels)?;
    let n = batch.len();
    let mut sim = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let s = metric.similarity_parts(&batch[i], &batch[j])?.value;
            sim[i][j] = s;
            sim[j][i] = s;
        }
    }
    let mut positives = vec![Vec::new(); n];
    let mut negatives = vec![Vec::new(); n];
    for i in 0..n {
        let mut min_pos = f64::INFINITY;
        let mut max_neg = f64::NEG_INFINITY;
        for j in (0..n).filter(|&j| j != i) {
            if label_equal(&labels[i], &labels[j]) {
                min_pos = min_pos.min(sim[i][j]);
            } else {
                max_neg = max_neg.max(sim[i][j]);
            }
        }
        for j in (0..n).filter(|&j| j != i) {
            if label_equal(&labels[i], &labels[j]) {
                if sim[i][j] < max_neg + cfg.ms_epsilon {
                    positives[i].push(j);
                }
            } else if sim[i][j] > min_pos - cfg.ms_epsilon {
                negatives[i].push(j);
            }
        }
    }
    Ok(Mining::MultiSimilarity {
        positives,
        negatives,
    })
}

pub(super) fn multi_similarity_from_mining(
    batch: &[PairedEmbedding],
    metric: &PairMetric,
    cfg: &LossConfig,
    positives: &[Vec<usize>],
    negatives: &[Vec<usize>],
) -> Result<LossOutput> {
    let mut out = LossOutput::new(batch, None);
    let n = batch.len();
    if n == 0 {
        return Ok(out);
    }
    let scale = 1.0 / n as f64;
    for i in 0..n {
        for (set, sign, s) in [
            (&positives[i], -1.0, cfg.ms_alpha),
            (&negatives[i], 1.0, cfg.ms_beta),
        ] {
            if set.is_empty() {
                continue;
            }
            let parts = set
                .iter()
                .map(|&j| metric.similarity_parts(&batch[i], &batch[j]))
                .collect::<Result<Vec<_>>>()?;
            let logits: Vec<f64> = parts
                .iter()
                .map(|p| sign * s * (p.value - cfg.ms_lambda))
                .collect();
            let total = log1p_sum_exp(&logits);
            out.value += scale * total / s;
            for ((&j, p), z) in set.iter().zip(&parts).zip(&logits) {
                // d/dS of (1/s) log(1 + sum exp(sign s (S - lambda)))
                let w = scale * sign * (z - total).exp();
                let (gi, gj) = out.grads.two(i, j);
                scatter_pair(&batch[i], &batch[j], p, true, w, gi, gj);
            }
        }
    }
    Ok(out)
}

/// Multi-similarity loss averaged over anchors, on cosine similarities.
pub fn multi_similarity_loss(
    batch: &[PairedEmbedding],
    labels: &[LabelSet],
    metric: &PairMetric,
    cfg: &LossConfig,
) -> Result<LossOutput> {
    match mine_multi_similarity(batch, labels, metric, cfg)? {
        Mining::MultiSimilarity {
            positives,
            negatives,
        } => multi_similarity_from_mining(batch, metric, cfg, &positives, &negatives),
        _ => unreachable!(),
    }
}
