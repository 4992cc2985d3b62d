//! Feature-level mixup with set-valued labels.

use idml::mixer::{label_equal, mix_batch, LabelSet, MixConfig};

pub fn run_example() -> idml::Result<()> {
    let features: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, -(i as f64)]).collect();
    let labels: Vec<LabelSet> = [0, 0, 1, 1, 2, 2].iter().map(|&c| LabelSet::single(c)).collect();
    let cfg = MixConfig {
        mix_prob: 1.0,
        beta_a: 0.4,
        rng_seed: 3,
    };
    let batch = mix_batch(&features, &labels, &cfg)?;
    for (k, &(a, b, lam)) in batch.parents.iter().enumerate() {
        let i = features.len() + k;
        println!(
            "mixed {a} and {b} with lambda {lam:.3}: label {} features {:?}",
            batch.labels[i], batch.features[i]
        );
    }
    let blend = LabelSet::pair(0, 1)?;
    println!("{{0,1}} matches 0: {}", label_equal(&blend, &LabelSet::single(0)));
    println!("{{0,1}} matches {{1,2}}: {}", label_equal(&blend, &LabelSet::pair(1, 2)?));
    println!("{{0,1}} matches 2: {}", label_equal(&blend, &LabelSet::single(2)));
    Ok(())
}

#[allow(dead_code)]
fn main() -> idml::Result<()> {
    run_example()
}
