//! Brute-force reference implementations shared by the integration tests.
//! Written from the definitions, without calling the library's own helpers.

#![allow(dead_code)]

use std::collections::HashMap;

use idml::metric::PairedEmbedding;
use idml::mixer::LabelSet;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_vec(r: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| r.random_range(lo..hi)).collect()
}

pub fn random_embedding(r: &mut ChaCha8Rng, d_s: usize, d_u: usize, u_scale: f64) -> PairedEmbedding {
    PairedEmbedding::new(
        uniform_vec(r, d_s, -1.0, 1.0),
        uniform_vec(r, d_u, -u_scale, u_scale.max(1e-300)),
    )
    .unwrap()
}

pub fn with_zero_uncertainty(e: &PairedEmbedding) -> PairedEmbedding {
    PairedEmbedding::new(e.semantic.clone(), vec![0.0; e.uncertainty.len()]).unwrap()
}

pub fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn alpha(a: &PairedEmbedding, b: &PairedEmbedding) -> f64 {
    let d: Vec<f64> = a.semantic.iter().zip(&b.semantic).map(|(x, y)| x - y).collect();
    l2(&d)
}

pub fn beta(a: &PairedEmbedding, b: &PairedEmbedding) -> f64 {
    let s: Vec<f64> = a.uncertainty.iter().zip(&b.uncertainty).map(|(x, y)| x + y).collect();
    l2(&s)
}

pub fn cosine(a: &PairedEmbedding, b: &PairedEmbedding) -> f64 {
    let dot: f64 = a.semantic.iter().zip(&b.semantic).map(|(x, y)| x * y).sum();
    dot / (l2(&a.semantic) * l2(&b.semantic))
}

/// `alpha exp(-(beta + gamma) / (tau alpha))`, with the same division floor.
pub fn d_in(a: &PairedEmbedding, b: &PairedEmbedding, gamma: f64, tau: f64) -> f64 {
    let al = alpha(a, b);
    al * (-(beta(a, b) + gamma) / (tau * al.max(1e-12))).exp()
}

/// `1 - (1 - C) exp(-(beta + gamma) / (tau (1 - C)))`.
pub fn c_in(a: &PairedEmbedding, b: &PairedEmbedding, gamma: f64, tau: f64) -> f64 {
    let c = cosine(a, b);
    let disc = 1.0 - c;
    1.0 - disc * (-(beta(a, b) + gamma) / (tau * disc.max(1e-12))).exp()
}

pub fn same(a: &LabelSet, b: &LabelSet) -> bool {
    a.ids().any(|c| b.contains(c))
}

pub fn singles(ids: &[u32]) -> Vec<LabelSet> {
    ids.iter().map(|&c| LabelSet::single(c)).collect()
}

/// Ordered by (distance, index).
pub fn brute_ranking(dist: &[Vec<f64>], q: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..dist.len()).filter(|&j| j != q).collect();
    idx.sort_by(|&a, &b| dist[q][a].partial_cmp(&dist[q][b]).unwrap().then(a.cmp(&b)));
    idx
}

pub fn brute_recall(dist: &[Vec<f64>], labels: &[u32], k: usize) -> f64 {
    let n = labels.len();
    let mut hits = 0;
    for q in 0..n {
        let top = &brute_ranking(dist, q)[..k];
        if top.iter().any(|&j| labels[j] == labels[q]) {
            hits += 1;
        }
    }
    hits as f64 / n as f64
}

/// `(R-Precision, MAP@R)`, skipping queries with no relevant item.
pub fn brute_rp_map(dist: &[Vec<f64>], labels: &[u32]) -> (f64, f64) {
    let n = labels.len();
    let (mut rp, mut map, mut count) = (0.0, 0.0, 0usize);
    for q in 0..n {
        let r = (0..n).filter(|&j| j != q && labels[j] == labels[q]).count();
        if r == 0 {
            continue;
        }
        let ranking = brute_ranking(dist, q);
        let rel: Vec<bool> = ranking[..r].iter().map(|&j| labels[j] == labels[q]).collect();
        rp += rel.iter().filter(|&&x| x).count() as f64 / r as f64;
        let mut ap = 0.0;
        for i in 0..r {
            if rel[i] {
                let hits_so_far = rel[..=i].iter().filter(|&&x| x).count();
                ap += hits_so_far as f64 / (i + 1) as f64;
            }
        }
        map += ap / r as f64;
        count += 1;
    }
    if count == 0 {
        (0.0, 0.0)
    } else {
        (rp / count as f64, map / count as f64)
    }
}

/// NMI from entropies computed on the contingency table.
pub fn entropy_nmi(a: &[usize], b: &[u32]) -> f64 {
    let n = a.len() as f64;
    let mut table: HashMap<(usize, u32), f64> = HashMap::new();
    let mut pa: HashMap<usize, f64> = HashMap::new();
    let mut pb: HashMap<u32, f64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1.0 / n;
        *pa.entry(x).or_default() += 1.0 / n;
        *pb.entry(y).or_default() += 1.0 / n;
    }
    let h = |m: &mut dyn Iterator<Item = f64>| -> f64 { m.map(|p| -p * p.ln()).sum() };
    let ha = h(&mut pa.values().copied());
    let hb = h(&mut pb.values().copied());
    let h_joint = h(&mut table.values().copied());
    // I(A;B) = H(A) + H(B) - H(A,B)
    let mi = ha + hb - h_joint;
    if ha + hb == 0.0 {
        1.0
    } else {
        2.0 * mi / (ha + hb)
    }
}

/// Exhaustive semi-hard choice: among negatives sorted by (distance, index),
/// the first one strictly farther than the positive, else the farthest one
/// (lowest index among equally far).
pub fn brute_semi_hard(row: &[f64], anchor: usize, positive: usize, labels: &[LabelSet]) -> Option<usize> {
    let mut negs: Vec<usize> = (0..labels.len())
        .filter(|&n| n != anchor && !same(&labels[anchor], &labels[n]))
        .collect();
    if negs.is_empty() {
        return None;
    }
    negs.sort_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap().then(a.cmp(&b)));
    if let Some(&n) = negs.iter().find(|&&n| row[n] > row[positive]) {
        return Some(n);
    }
    let far = negs.iter().map(|&n| row[n]).fold(f64::NEG_INFINITY, f64::max);
    negs.into_iter().find(|&n| row[n] == far)
}

/// Unnormalized inverse-density weight for a negative at distance `d`.
pub fn dw_weight(d: f64, n_dim: usize, phi: f64, d_min: f64) -> f64 {
    let d = d.clamp(d_min, 2.0 - d_min);
    let n = n_dim as f64;
    let q_inv = d.powf(2.0 - n) * (1.0 - d * d / 4.0).powf((3.0 - n) / 2.0);
    q_inv.min(phi)
}
