use crate::error::Result;
use crate::metric::{scatter_pair, PairMetric, PairedEmbedding, Partials};
use crate::mixer::LabelSet;

use super::{
    check_batch, log1p_sum_exp, log_sum_exp, EmbeddingGrads, LossConfig, LossOutput, ProxyBank,
};

/// Adds `weight * d(metric)/d(.)` to sample `i` and proxy `j`.
fn add_sample_proxy(
    out: &mut LossOutput,
    x: &PairedEmbedding,
    i: usize,
    proxy: &PairedEmbedding,
    j: usize,
    parts: &Partials,
    cosine: bool,
    weight: f64,
) {
    let pg: &mut EmbeddingGrads = out.proxy_grads.as_mut().expect("proxy gradients");
    scatter_pair(x, proxy, parts, cosine, weight, out.grads.slot(i), pg.slot(j));
}

/// Per-sample log-ratio clamped to `[-cap, cap]`; returns the value and
/// whether the gradient passes through.
fn clamp_log(out: &mut LossOutput, v: f64, cap: f64) -> (f64, bool) {
    out.touch_kink(cap - v.abs());
    if v.abs() > cap || v.is_nan() {
        out.clamp_events += 1;
        (if v > 0.0 { cap } else { -cap }, false)
    } else {
        (v, true)
    }
}

fn softmax_weights(xs: &[f64]) -> Vec<f64> {
    let z = log_sum_exp(xs);
    xs.iter().map(|x| (x - z).exp()).collect()
}

fn prepare(
    batch: &[PairedEmbedding],
    labels: &[LabelSet],
    proxies: &ProxyBank,
) -> Result<()> {
    check_batch(batch, labels)?;
    proxies.check_covers(labels)?;
    if let (Some(x), Some(p)) = (batch.first(), proxies.proxies.first()) {
        crate::error::check_dim("proxy semantic", x.semantic.len(), p.semantic.len())?;
        crate::error::check_dim("proxy uncertainty", x.uncertainty.len(), p.uncertainty.len())?;
    }
    Ok(())
}

pub(super) fn proxy_nca(
    batch: &[PairedEmbedding],
    labels: &[LabelSet],
    proxies: &ProxyBank,
    metric: &PairMetric,
    cfg: &LossConfig,
) -> Result<LossOutput> {
    prepare(batch, labels, proxies)?;
    let mut out = LossOutput::new(batch, Some(proxies));
    // default: -log(sum_pos e^{-D} / sum_neg e^{-D}); printed form uses e^{+D}
    let sign = if cfg.fidelity_mode { 1.0 } else { -1.0 };
    for (i, x) in batch.iter().enumerate() {
        let parts: Vec<Partials> = proxies
            .proxies
            .iter()
            .map(|p| metric.distance_parts(x, p))
            .collect();
        let (mut pos, mut neg) = (Vec::new(), Vec::new());
        for (j, c) in proxies.labels.iter().enumerate() {
            if labels[i].contains(*c) {
                pos.push(j);
            } else {
                neg.push(j);
            }
        }
        let zp: Vec<f64> = pos.iter().map(|&j| sign * parts[j].value).collect();
        let zn: Vec<f64> = neg.iter().map(|&j| sign * parts[j].value).collect();
        let raw = -log_sum_exp(&zp) + log_sum_exp(&zn);
        let (v, live) = clamp_log(&mut out, raw, cfg.log_cap);
        out.value += v;
        if !live {
            continue;
        }
        for (&j, w) in pos.iter().zip(softmax_weights(&zp)) {
            let p = &proxies.proxies[j];
            add_sample_proxy(&mut out, x, i, p, j, &parts[j], false, -sign * w);
        }
        for (&j, w) in neg.iter().zip(softmax_weights(&zn)) {
            let p = &proxies.proxies[j];
            add_sample_proxy(&mut out, x, i, p, j, &parts[j], false, sign * w);
        }
    }
    Ok(out)
}

/// ProxyNCA summed over samples. Positive proxies are those whose class is in
/// the sample's label set.
pub fn proxy_nca_loss(
    batch: &[PairedEmbedding],
    labels: &[LabelSet],
    proxies: &ProxyBank,
    metric: &PairMetric,
    cfg: &LossConfig,
) -> Result<LossOutput> {
    proxy_nca(batch, labels, proxies, metric, cfg)
}

pub(super) fn proxy_anchor(
    batch: &[PairedEmbedding],
    labels: &[LabelSet],
    proxies: &ProxyBank,
    metric: &PairMetric,
    cfg: &LossConfig,
) -> Result<LossOutput> {
    prepare(batch, labels, proxies)?;
    let mut out = LossOutput::new(batch, Some(proxies));
    let n_proxies = proxies.len();
    let sims: Vec<Vec<Partials>> = batch
        .iter()
        .map(|x| {
            proxies
                .proxies
                .iter()
                .map(|p| metric.similarity_parts(x, p))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let with_positives: Vec<usize> = (0..n_proxies)
        .filter(|&j| labels.iter().any(|l| l.contains(proxies.labels[j])))
        .collect();

    for j in 0..n_proxies {
        let c = proxies.labels[j];
        let (pos, neg): (Vec<usize>, Vec<usize>) =
            (0..batch.len()).partition(|&i| labels[i].contains(c));
        let mut terms = Vec::new();
        if !pos.is_empty() {
            terms.push((
                pos,
                -cfg.pa_alpha,
                -cfg.pa_delta,
                1.0 / with_positives.len() as f64,
            ));
        }
        if !neg.is_empty() {
            terms.push((neg, cfg.pa_alpha, cfg.pa_delta, 1.0 / n_proxies as f64));
        }
        for (members, scale, shift, weight) in terms {
            let logits: Vec<f64> = members
                .iter()
                .map(|&i| scale * (sims[i][j].value + shift))
                .collect();
            let total = log1p_sum_exp(&logits);
            out.value += weight * total;
            for (&i, z) in members.iter().zip(&logits) {
                let w = weight * scale * (z - total).exp();
                let p = &proxies.proxies[j];
                add_sample_proxy(&mut out, &batch[i], i, p, j, &sims[i][j], true, w);
            }
        }
    }
    Ok(out)
}

/// ProxyAnchor on cosine similarities:
/// `1/|P+| sum log(1 + sum_pos e^{-a(C - d)}) + 1/|P| sum log(1 + sum_neg e^{a(C + d)})`.
pub fn proxy_anchor_loss(
    batch: &[PairedEmbedding],
    labels: &[LabelSet],
    proxies: &ProxyBank,
    metric: &PairMetric,
    cfg: &LossConfig,
) -> Result<LossOutput> {
    proxy_anchor(batch, labels, proxies, metric, cfg)
}

pub(super) fn softmax_ism(
    batch: &[PairedEmbedding],
    labels: &[LabelSet],
    proxies: &ProxyBank,
    metric: &PairMetric,
    cfg: &LossConfig,
) -> Result<LossOutput> {
    prepare(batch, labels, proxies)?;
    let mut out = LossOutput::new(batch, Some(proxies));
    if batch.is_empty() {
        return Ok(out);
    }
    let scale = 1.0 / batch.len() as f64;
    for (i, x) in batch.iter().enumerate() {
        let parts = proxies
            .proxies
            .iter()
            .map(|p| metric.similarity_parts(x, p))
            .collect::<Result<Vec<_>>>()?;
        let logits: Vec<f64> = parts.iter().map(|p| p.value).collect();
        let is_pos: Vec<bool> = proxies.labels.iter().map(|c| labels[i].contains(*c)).collect();
        let pick = |want: bool| -> Vec<f64> {
            logits
                .iter()
                .zip(&is_pos)
                .filter(|(_, &p)| p == want)
                .map(|(z, _)| *z)
                .collect()
        };
        let lse_pos = log_sum_exp(&pick(true));
        // default denominator runs over every proxy; the printed form only over negatives
        let lse_den = if cfg.fidelity_mode {
            log_sum_exp(&pick(false))
        } else {
            log_sum_exp(&logits)
        };
        let (v, live) = clamp_log(&mut out, lse_den - lse_pos, cfg.log_cap);
        out.value += scale * v;
        if !live {
            continue;
        }
        for (j, z) in logits.iter().enumerate() {
            let mut g = 0.0;
            if is_pos[j] {
                g -= (z - lse_pos).exp();
            }
            if !cfg.fidelity_mode || !is_pos[j] {
                g += (z - lse_den).exp();
            }
            let p = &proxies.proxies[j];
            add_sample_proxy(&mut out, x, i, p, j, &parts[j], true, scale * g);
        }
    }
    Ok(out)
}

/// Softmax cross-entropy with weakened cosine logits against proxies,
/// averaged over samples.
pub fn softmax_ism_loss(
    batch: &[PairedEmbedding],
    labels: &[LabelSet],
    proxies: &ProxyBank,
    metric: &PairMetric,
    cfg: &LossConfig,
) -> Result<LossOutput> {
    softmax_ism(batch, labels, proxies, metric, cfg)
}
