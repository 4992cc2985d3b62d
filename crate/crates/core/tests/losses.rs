mod common;

use common::*;
use idml::loss::*;
use idml::metric::{MetricParams, PairMetric, PairedEmbedding};
use idml::mixer::LabelSet;
use idml::sampler::MiningConfig;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const D_S: usize = 4;
const D_U: usize = 3;

struct Case {
    batch: Vec<PairedEmbedding>,
    labels: Vec<LabelSet>,
    proxies: ProxyBank,
}

fn random_case(r: &mut ChaCha8Rng, u_scale: f64) -> Case {
    let n = r.random_range(5..10);
    let mut labels: Vec<LabelSet> = (0..n).map(|i| LabelSet::single((i % 3) as u32)).collect();
    if r.random_bool(0.5) {
        labels[n - 1] = LabelSet::pair(0, 2).unwrap();
    }
    let batch = (0..n).map(|_| random_embedding(r, D_S, D_U, u_scale)).collect();
    let proxies = ProxyBank::new(
        (0..3).map(|_| random_embedding(r, D_S, D_U, u_scale)).collect(),
        vec![0, 1, 2],
    )
    .unwrap();
    Case { batch, labels, proxies }
}

fn zero_u_case(c: &Case) -> Case {
    Case {
        batch: c.batch.iter().map(with_zero_uncertainty).collect(),
        labels: c.labels.clone(),
        proxies: ProxyBank::new(
            c.proxies.proxies.iter().map(with_zero_uncertainty).collect(),
            c.proxies.labels.clone(),
        )
        .unwrap(),
    }
}

fn metrics(r: &mut ChaCha8Rng) -> Vec<(PairMetric, Option<(f64, f64)>)> {
    let g = r.random_range(0.0..1.0);
    let t = r.random_range(0.5..5.0);
    vec![
        (PairMetric::euclidean(), None),
        (PairMetric::introspective(MetricParams::new(g, t).unwrap()), Some((g, t))),
    ]
}

fn dist(a: &PairedEmbedding, b: &PairedEmbedding, gt: Option<(f64, f64)>) -> f64 {
    match gt {
        None => alpha(a, b),
        Some((g, t)) => d_in(a, b, g, t),
    }
}

fn sim(a: &PairedEmbedding, b: &PairedEmbedding, gt: Option<(f64, f64)>) -> f64 {
    match gt {
        None => cosine(a, b),
        Some((g, t)) => c_in(a, b, g, t),
    }
}

fn lse(xs: &[f64]) -> f64 {
    xs.iter().map(|x| x.exp()).sum::<f64>().ln()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

fn run(cfg: &LossConfig, c: &Case, m: &PairMetric, seed: u64) -> (LossOutput, Mining) {
    let mining = MiningConfig {
        rng_seed: seed,
        ..MiningConfig::default()
    };
    compute(cfg, &c.batch, &c.labels, Some(&c.proxies), m, &mining).unwrap()
}

#[test]
fn margin_matches_oracle() {
    let mut r = rng(1);
    let cfg = LossConfig::for_variant(LossVariant::MarginDw);
    for it in 0..100 {
        let c = random_case(&mut r, 0.3);
        for (m, gt) in metrics(&mut r) {
            let (out, mined) = run(&cfg, &c, &m, it);
            let Mining::MarginPairs { positives, negatives } = mined else {
                panic!("margin mining")
            };
            let n = c.batch.len();
            let expected_pos: Vec<(usize, usize)> = (0..n)
                .flat_map(|a| (0..n).map(move |p| (a, p)))
                .filter(|&(a, p)| a != p && same(&c.labels[a], &c.labels[p]))
                .collect();
            assert_eq!(positives, expected_pos);
            assert_eq!(negatives.len(), positives.len());
            for (&(a, _), &(a2, neg)) in positives.iter().zip(&negatives) {
                assert_eq!(a, a2);
                assert!(!same(&c.labels[a], &c.labels[neg]));
            }
            let mut v = 0.0;
            for &(a, p) in &positives {
                v += (dist(&c.batch[a], &c.batch[p], gt) - cfg.xi).max(0.0);
            }
            for &(a, neg) in &negatives {
                v += (cfg.omega - dist(&c.batch[a], &c.batch[neg], gt)).max(0.0);
            }
            assert!(close(out.value, v, 1e-12), "{} vs {v}", out.value);
        }
    }
}

#[test]
fn margin_fidelity_mode_subtracts_negative_hinge() {
    let mut r = rng(2);
    let c = random_case(&mut r, 0.3);
    let m = PairMetric::introspective(MetricParams::new(0.2, 2.0).unwrap());
    let cfg = LossConfig::for_variant(LossVariant::MarginDw);
    let fid = LossConfig {
        fidelity_mode: true,
        ..cfg
    };
    let (a, mined) = run(&cfg, &c, &m, 5);
    let b = evaluate(&fid, &c.batch, &c.labels, None, &m, &mined).unwrap();
    let Mining::MarginPairs { negatives, .. } = mined else { panic!() };
    let neg: f64 = negatives
        .iter()
        .map(|&(i, j)| (cfg.omega - m.distance(&c.batch[i], &c.batch[j]).unwrap()).max(0.0))
        .sum();
    assert!(close(a.value - b.value, 2.0 * neg, 1e-12));
}

#[test]
fn triplet_matches_oracle() {
    let mut r = rng(3);
    let cfg = LossConfig::for_variant(LossVariant::TripletSemihard);
    for it in 0..100 {
        let c = random_case(&mut r, 0.3);
        for (m, gt) in metrics(&mut r) {
            let (out, _) = run(&cfg, &c, &m, it);
            let n = c.batch.len();
            let mut v = 0.0;
            for a in 0..n {
                let row: Vec<f64> = (0..n).map(|j| dist(&c.batch[a], &c.batch[j], gt)).collect();
                for p in (0..n).filter(|&p| p != a && same(&c.labels[a], &c.labels[p])) {
                    if let Some(neg) = brute_semi_hard(&row, a, p, &c.labels) {
                        v += (row[p] - row[neg] + cfg.triplet_delta).max(0.0);
                    }
                }
            }
            assert!(close(out.value, v, 1e-12), "{} vs {v}", out.value);
        }
    }
}

#[test]
fn contrastive_matches_oracle() {
    let mut r = rng(4);
    let cfg = LossConfig::for_variant(LossVariant::Contrastive);
    for _ in 0..100 {
        let c = random_case(&mut r, 0.3);
        for (m, gt) in metrics(&mut r) {
            let (out, _) = run(&cfg, &c, &m, 0);
            let n = c.batch.len();
            let mut v = 0.0;
            for i in 0..n {
                for j in i + 1..n {
                    let d = dist(&c.batch[i], &c.batch[j], gt);
                    v += if same(&c.labels[i], &c.labels[j]) {
                        d
                    } else {
                        (cfg.contrastive_delta - d).max(0.0)
                    };
                }
            }
            assert!(close(out.value, v, 1e-12));
        }
    }
}

#[test]
fn multi_similarity_matches_oracle() {
    let mut r = rng(5);
    let cfg = LossConfig::for_variant(LossVariant::MultiSimilarity);
    for _ in 0..100 {
        let c = random_case(&mut r, 0.3);
        for (m, gt) in metrics(&mut r) {
            let (out, _) = run(&cfg, &c, &m, 0);
            let n = c.batch.len();
            let mut v = 0.0;
            for i in 0..n {
                let s: Vec<f64> = (0..n).map(|j| sim(&c.batch[i], &c.batch[j], gt)).collect();
                let pos: Vec<usize> =
                    (0..n).filter(|&j| j != i && same(&c.labels[i], &c.labels[j])).collect();
                let neg: Vec<usize> =
                    (0..n).filter(|&j| j != i && !same(&c.labels[i], &c.labels[j])).collect();
                let min_pos = pos.iter().map(|&j| s[j]).fold(f64::INFINITY, f64::min);
                let max_neg = neg.iter().map(|&j| s[j]).fold(f64::NEG_INFINITY, f64::max);
                let kept_pos: Vec<f64> = pos
                    .iter()
                    .filter(|&&j| s[j] < max_neg + cfg.ms_epsilon)
                    .map(|&j| s[j])
                    .collect();
                let kept_neg: Vec<f64> = neg
                    .iter()
                    .filter(|&&j| s[j] > min_pos - cfg.ms_epsilon)
                    .map(|&j| s[j])
                    .collect();
                if !kept_pos.is_empty() {
                    let sum: f64 = kept_pos
                        .iter()
                        .map(|x| (-cfg.ms_alpha * (x - cfg.ms_lambda)).exp())
                        .sum();
                    v += (1.0 + sum).ln() / cfg.ms_alpha;
                }
                if !kept_neg.is_empty() {
                    let sum: f64 = kept_neg
                        .iter()
                        .map(|x| (cfg.ms_beta * (x - cfg.ms_lambda)).exp())
                        .sum();
                    v += (1.0 + sum).ln() / cfg.ms_beta;
                }
            }
            v /= n as f64;
            assert!(close(out.value, v, 1e-10), "{} vs {v}", out.value);
        }
    }
}

#[test]
fn proxy_nca_matches_oracle() {
    let mut r = rng(6);
    let cfg = LossConfig::for_variant(LossVariant::ProxyNca);
    for _ in 0..100 {
        let c = random_case(&mut r, 0.3);
        for (m, gt) in metrics(&mut r) {
            let (out, _) = run(&cfg, &c, &m, 0);
            let mut v = 0.0;
            for (x, l) in c.batch.iter().zip(&c.labels) {
                let (mut pos, mut neg) = (Vec::new(), Vec::new());
                for (p, &cl) in c.proxies.proxies.iter().zip(&c.proxies.labels) {
                    let z = -dist(x, p, gt);
                    if l.contains(cl) {
                        pos.push(z)
                    } else {
                        neg.push(z)
                    }
                }
                v += (-lse(&pos) + lse(&neg)).clamp(-cfg.log_cap, cfg.log_cap);
            }
            assert!(close(out.value, v, 1e-12));
            assert!(out.proxy_grads.is_some());
        }
    }
}

#[test]
fn proxy_anchor_matches_oracle() {
    let mut r = rng(7);
    let cfg = LossConfig::for_variant(LossVariant::ProxyAnchor);
    for _ in 0..100 {
        let c = random_case(&mut r, 0.3);
        for (m, gt) in metrics(&mut r) {
            let (out, _) = run(&cfg, &c, &m, 0);
            let n_p = c.proxies.len() as f64;
            let mut with_pos = 0.0;
            let (mut pos_term, mut neg_term) = (0.0, 0.0);
            for (p, &cl) in c.proxies.proxies.iter().zip(&c.proxies.labels) {
                let (mut sp, mut sn) = (0.0, 0.0);
                let mut any = false;
                for (x, l) in c.batch.iter().zip(&c.labels) {
                    let s = sim(x, p, gt);
                    if l.contains(cl) {
                        any = true;
                        sp += (-cfg.pa_alpha * (s - cfg.pa_delta)).exp();
                    } else {
                        sn += (cfg.pa_alpha * (s + cfg.pa_delta)).exp();
                    }
                }
                if any {
                    with_pos += 1.0;
                }
                pos_term += (1.0 + sp).ln();
                neg_term += (1.0 + sn).ln();
            }
            let v = pos_term / with_pos + neg_term / n_p;
            assert!(close(out.value, v, 1e-10), "{} vs {v}", out.value);
        }
    }
}

#[test]
fn softmax_matches_oracle() {
    let mut r = rng(8);
    let cfg = LossConfig::for_variant(LossVariant::SoftmaxIsm);
    for _ in 0..100 {
        let c = random_case(&mut r, 0.3);
        for (m, gt) in metrics(&mut r) {
            let (out, _) = run(&cfg, &c, &m, 0);
            let mut v = 0.0;
            for (x, l) in c.batch.iter().zip(&c.labels) {
                let logits: Vec<f64> = c.proxies.proxies.iter().map(|p| sim(x, p, gt)).collect();
                let pos: Vec<f64> = logits
                    .iter()
                    .zip(&c.proxies.labels)
                    .filter(|(_, &cl)| l.contains(cl))
                    .map(|(z, _)| *z)
                    .collect();
                v += lse(&logits) - lse(&pos);
            }
            v /= c.batch.len() as f64;
            assert!(close(out.value, v, 1e-12));
        }
    }
}

fn rel_vec_err(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let fa: Vec<f64> = a.iter().flatten().copied().collect();
    let fb: Vec<f64> = b.iter().flatten().copied().collect();
    let diff: Vec<f64> = fa.iter().zip(&fb).map(|(x, y)| x - y).collect();
    l2(&diff) / l2(&fa).max(l2(&fb)).max(1e-300)
}

/// With u = 0 and gamma = 0, each loss and its gradients equal the classical
/// Euclidean/cosine baseline.
#[test]
fn zero_uncertainty_reduces_to_baseline() {
    let mut r = rng(9);
    for variant in LossVariant::ALL {
        let cfg = LossConfig::for_variant(variant);
        for it in 0..50 {
            let c = zero_u_case(&random_case(&mut r, 0.0));
            let tau = r.random_range(0.5..8.0);
            let idml = PairMetric::introspective(MetricParams::new(0.0, tau).unwrap());
            let (a, ma) = run(&cfg, &c, &idml, it);
            let (b, mb) = run(&cfg, &c, &PairMetric::euclidean(), it);
            assert_eq!(ma, mb, "{}: mining differs", variant.name());
            assert!(
                (a.value - b.value).abs() <= 1e-10 * b.value.abs().max(1e-300),
                "{}: {} vs {}",
                variant.name(),
                a.value,
                b.value
            );
            assert!(rel_vec_err(&a.grads.semantic, &b.grads.semantic) <= 1e-10);
            assert!(a.grads.uncertainty.iter().flatten().all(|v| *v == 0.0));
            if let (Some(pa), Some(pb)) = (&a.proxy_grads, &b.proxy_grads) {
                assert!(rel_vec_err(&pa.semantic, &pb.semantic) <= 1e-10);
            }
        }
    }
}

#[test]
fn single_class_batch_warns() {
    let batch: Vec<PairedEmbedding> = (0..4)
        .map(|i| PairedEmbedding::new(vec![i as f64, 1.0], vec![0.1]).unwrap())
        .collect();
    let labels = singles(&[0, 0, 0, 0]);
    let m = PairMetric::default();
    let mc = MiningConfig::default();
    for variant in [LossVariant::MarginDw, LossVariant::Contrastive] {
        let cfg = LossConfig::for_variant(variant);
        let (out, _) = compute(&cfg, &batch, &labels, None, &m, &mc).unwrap();
        assert_eq!(out.warnings, vec![LossWarning::SingleClassBatch]);
    }
    let cfg = LossConfig::for_variant(LossVariant::TripletSemihard);
    let (out, _) = compute(&cfg, &batch, &labels, None, &m, &mc).unwrap();
    assert_eq!(out.warnings, vec![LossWarning::NoValidTriplets]);
    assert_eq!(out.value, 0.0);
    assert!(out.grads.is_zero());
}

#[test]
fn mixed_label_is_positive_for_both_parents() {
    let batch = vec![
        PairedEmbedding::new(vec![0.0, 0.0], vec![0.0]).unwrap(),
        PairedEmbedding::new(vec![1.0, 0.0], vec![0.0]).unwrap(),
        PairedEmbedding::new(vec![0.0, 1.0], vec![0.0]).unwrap(),
    ];
    let labels = vec![LabelSet::pair(0, 1).unwrap(), LabelSet::single(0), LabelSet::single(1)];
    let cfg = LossConfig::for_variant(LossVariant::Contrastive);
    let out = contrastive_loss(&batch, &labels, &PairMetric::euclidean(), &cfg).unwrap();
    // pairs (0,1) and (0,2) are positive, (1,2) negative at distance sqrt 2 > delta
    assert!((out.value - 2.0).abs() < 1e-15);
}

#[test]
fn proxy_loss_requires_every_class() {
    let batch = vec![PairedEmbedding::new(vec![1.0, 0.0], vec![0.0]).unwrap(); 2];
    let labels = singles(&[0, 5]);
    let bank = ProxyBank::new(
        vec![PairedEmbedding::new(vec![0.0, 1.0], vec![0.0]).unwrap()],
        vec![0],
    )
    .unwrap();
    let cfg = LossConfig::for_variant(LossVariant::ProxyNca);
    let r = proxy_nca_loss(&batch, &labels, &bank, &PairMetric::default(), &cfg);
    assert!(matches!(r, Err(idml::Error::MissingProxy(5))));
}

#[test]
fn nca_log_terms_are_clamped() {
    let batch = vec![PairedEmbedding::new(vec![0.0], vec![0.0]).unwrap()];
    let labels = singles(&[0]);
    let bank = ProxyBank::new(
        vec![
            PairedEmbedding::new(vec![500.0], vec![0.0]).unwrap(),
            PairedEmbedding::new(vec![0.0], vec![0.0]).unwrap(),
        ],
        vec![0, 1],
    )
    .unwrap();
    let cfg = LossConfig::for_variant(LossVariant::ProxyNca);
    let out = proxy_nca_loss(&batch, &labels, &bank, &PairMetric::euclidean(), &cfg).unwrap();
    assert_eq!(out.value, cfg.log_cap);
    assert_eq!(out.clamp_events, 1);
    assert!(out.grads.is_zero());
}
