//! All seven losses on one toy batch, under the Euclidean metric and the
//! introspective metric. The batch holds one two-class blend.

use idml::loss::{compute, LossConfig, LossVariant, ProxyBank};
use idml::metric::{MetricParams, PairMetric, PairedEmbedding};
use idml::mixer::LabelSet;
use idml::sampler::MiningConfig;

pub fn run_example() -> idml::Result<()> {
    let s = |c| LabelSet::single(c);
    let labels = vec![s(0), s(0), s(1), s(1), s(2), s(2), LabelSet::pair(0, 1)?];
    let raw = [
        ([1.0, 0.1], [0.05, 0.0]),
        ([0.5, 0.7], [0.0, 0.05]),
        ([0.7, 0.6], [0.05, 0.05]),
        ([0.1, 0.9], [0.0, 0.0]),
        ([-1.0, -0.2], [0.0, 0.1]),
        ([0.2, -0.9], [0.05, 0.0]),
        ([0.6, 0.65], [0.6, 0.5]),
    ];
    let batch = raw
        .iter()
        .map(|(sem, u)| PairedEmbedding::new(sem.to_vec(), u.to_vec()))
        .collect::<idml::Result<Vec<_>>>()?;
    let proxies = ProxyBank::new(
        vec![
            PairedEmbedding::new(vec![1.0, 0.0], vec![0.0, 0.0])?,
            PairedEmbedding::new(vec![0.0, 1.0], vec![0.0, 0.0])?,
            PairedEmbedding::new(vec![-1.0, 0.0], vec![0.0, 0.0])?,
        ],
        vec![0, 1, 2],
    )?;
    let euclidean = PairMetric::euclidean();
    let introspective = PairMetric::introspective(MetricParams::new(0.0, 1.0)?);
    let mining = MiningConfig::default();

    println!("{:<18} {:>10} {:>10} {:>14}", "loss", "euclidean", "idml", "blend |grad s|");
    for variant in LossVariant::ALL {
        let cfg = LossConfig::for_variant(variant);
        let (e, _) = compute(&cfg, &batch, &labels, Some(&proxies), &euclidean, &mining)?;
        let (i, _) = compute(&cfg, &batch, &labels, Some(&proxies), &introspective, &mining)?;
        let blend = i.grads.semantic[6].iter().map(|v| v * v).sum::<f64>().sqrt();
        println!("{:<18} {:>10.4} {:>10.4} {:>14.4}", variant.name(), e.value, i.value, blend);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> idml::Result<()> {
    run_example()
}
