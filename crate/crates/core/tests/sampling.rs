mod common;

use common::*;
use idml::metric::{MetricParams, PairMetric, PairedEmbedding};
use idml::mixer::LabelSet;
use idml::sampler::*;
use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn random_labels(r: &mut rand_chacha::ChaCha8Rng, n: usize) -> Vec<LabelSet> {
    (0..n)
        .map(|_| {
            if r.random_bool(0.2) {
                LabelSet::pair(0, 2).unwrap()
            } else {
                LabelSet::single(r.random_range(0..3))
            }
        })
        .collect()
}

#[test]
fn semi_hard_equals_exhaustive_oracle() {
    let mut r = rng(21);
    for _ in 0..300 {
        let n = r.random_range(3..15);
        let labels = random_labels(&mut r, n);
        // quantized distances create ties
        let batch: Vec<PairedEmbedding> = (0..n)
            .map(|_| {
                PairedEmbedding::new(
                    vec![r.random_range(-2..=2) as f64, r.random_range(-2..=2) as f64],
                    vec![r.random_range(0.0..0.5)],
                )
                .unwrap()
            })
            .collect();
        for metric in [
            PairMetric::euclidean(),
            PairMetric::introspective(MetricParams::new(0.1, 2.0).unwrap()),
        ] {
            for a in 0..n {
                let row: Vec<f64> = (0..n).map(|j| metric.distance(&batch[a], &batch[j]).unwrap()).collect();
                for p in (0..n).filter(|&p| p != a && same(&labels[a], &labels[p])) {
                    let got = semi_hard_negative(a, p, &batch, &labels, &metric).unwrap();
                    assert_eq!(got, brute_semi_hard(&row, a, p, &labels));
                }
            }
        }
    }
}

#[test]
fn dw_probabilities_match_oracle() {
    let mut r = rng(22);
    for _ in 0..200 {
        let n = r.random_range(3..20);
        let labels = random_labels(&mut r, n);
        let row: Vec<f64> = (0..n).map(|_| r.random_range(0.0..2.0)).collect();
        let cfg = MiningConfig {
            n_dim: r.random_range(3..12),
            phi: r.random_range(0.5..50.0),
            ..MiningConfig::default()
        };
        let a = r.random_range(0..n);
        let negs: Vec<usize> = (0..n).filter(|&j| j != a && !same(&labels[a], &labels[j])).collect();
        match NegativeDistribution::from_row(&row, a, &labels, &cfg) {
            Err(idml::Error::NoNegatives(x)) => {
                assert_eq!(x, a);
                assert!(negs.is_empty());
            }
            Err(e) => panic!("{e}"),
            Ok(dist) => {
                assert_eq!(dist.candidates(), &negs[..]);
                let w: Vec<f64> = negs.iter().map(|&j| dw_weight(row[j], cfg.n_dim, cfg.phi, cfg.d_min)).collect();
                let total: f64 = w.iter().sum();
                for (p, wi) in dist.probabilities().iter().zip(&w) {
                    assert!((p - wi / total).abs() < 1e-12);
                }
            }
        }
    }
}

fn chi_square_p(counts: &[usize], probs: &[f64]) -> f64 {
    let n: usize = counts.iter().sum();
    let stat: f64 = counts
        .iter()
        .zip(probs)
        .map(|(&c, &p)| {
            let e = p * n as f64;
            (c as f64 - e).powi(2) / e
        })
        .sum();
    let dof = (counts.len() - 1) as f64;
    1.0 - ChiSquared::new(dof).unwrap().cdf(stat)
}

#[test]
fn dw_sampling_frequencies_pass_chi_square() {
    let labels = singles(&[0, 0, 1, 1, 2, 2, 1, 2]);
    let row = [0.0, 0.9, 0.3, 0.6, 1.0, 1.4, 1.8, 0.1];
    let cfg = MiningConfig {
        n_dim: 4,
        phi: 20.0,
        ..MiningConfig::default()
    };
    let dist = NegativeDistribution::from_row(&row, 0, &labels, &cfg).unwrap();
    let cand = dist.candidates().to_vec();
    let probs: Vec<f64> = {
        let w: Vec<f64> = cand.iter().map(|&j| dw_weight(row[j], 4, 20.0, cfg.d_min)).collect();
        let t: f64 = w.iter().sum();
        w.iter().map(|x| x / t).collect()
    };
    let mut counts = vec![0usize; cand.len()];
    let mut r = rng(23);
    for _ in 0..100_000 {
        let j = dist.sample(&mut r);
        counts[cand.iter().position(|&c| c == j).unwrap()] += 1;
    }
    let p = chi_square_p(&counts, &probs);
    assert!(p > 0.01, "chi-square p = {p}");
}

#[test]
fn dw_draw_depends_only_on_seed_and_anchor() {
    let mut r = rng(24);
    let batch: Vec<PairedEmbedding> = (0..10).map(|_| random_embedding(&mut r, 3, 2, 0.2)).collect();
    let labels = singles(&[0, 1, 2, 0, 1, 2, 0, 1, 2, 0]);
    let m = PairMetric::default();
    let cfg = MiningConfig {
        rng_seed: 99,
        ..MiningConfig::default()
    };
    let first: Vec<usize> = (0..10)
        .map(|a| distance_weighted_negative(a, &batch, &labels, &m, &cfg).unwrap())
        .collect();
    let reversed: Vec<usize> = (0..10)
        .rev()
        .map(|a| distance_weighted_negative(a, &batch, &labels, &m, &cfg).unwrap())
        .collect();
    assert_eq!(first, reversed.into_iter().rev().collect::<Vec<_>>());
    for (a, &n) in first.iter().enumerate() {
        assert!(!same(&labels[a], &labels[n]));
    }
}

#[test]
fn density_rejects_out_of_domain() {
    let cfg = MiningConfig::default();
    assert!(dw_density(0.0, &cfg).is_err());
    assert!(dw_density(2.0, &cfg).is_err());
    assert!(MiningConfig { n_dim: 2, ..cfg }.validate().is_err());
}
