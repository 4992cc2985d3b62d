//! Negative selection: semi-hard choice and distance-weighted sampling.

use idml::metric::{MetricParams, PairMetric, PairedEmbedding};
use idml::mixer::LabelSet;
use idml::sampler::{anchor_rng, dw_density, semi_hard_negative, MiningConfig, NegativeDistribution};

pub fn run_example() -> idml::Result<()> {
    // points on the unit circle, anchor at angle 0
    let angles = [0.0f64, 0.3, 0.4, 0.9, 1.5, 2.2, 3.0];
    let labels: Vec<LabelSet> = [0, 0, 1, 1, 2, 2, 1].iter().map(|&c| LabelSet::single(c)).collect();
    let batch = angles
        .iter()
        .map(|t| PairedEmbedding::new(vec![t.cos(), t.sin()], vec![0.0]))
        .collect::<idml::Result<Vec<_>>>()?;
    let metric = PairMetric::introspective(MetricParams::default());

    let row: Vec<f64> = batch.iter().map(|e| metric.distance(&batch[0], e)).collect::<idml::Result<_>>()?;
    println!("distances from anchor: {:?}", row.iter().map(|d| (d * 1000.0).round() / 1000.0).collect::<Vec<_>>());
    println!("semi-hard negative for (0, 1): {:?}", semi_hard_negative(0, 1, &batch, &labels, &metric)?);

    let cfg = MiningConfig::default();
    for d in [0.1, 0.5, 1.0, 1.41, 1.9] {
        println!("inverse density weight at d = {d}: {:.3e}", dw_density(d, &cfg)?);
    }
    let dist = NegativeDistribution::from_row(&row, 0, &labels, &cfg)?;
    let mut rng = anchor_rng(7, 0);
    let mut counts = vec![0usize; batch.len()];
    for _ in 0..10_000 {
        counts[dist.sample(&mut rng)] += 1;
    }
    for (&c, p) in dist.candidates().iter().zip(dist.probabilities()) {
        println!("negative {c}: p = {p:.4}, drawn {} / 10000", counts[c]);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> idml::Result<()> {
    run_example()
}
