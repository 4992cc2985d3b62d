//! Trains briefly, then evaluates the checkpoint on the held-out classes
//! under both test metrics: Recall@K, NMI, R-Precision and MAP@R, plus the
//! uncertainty summary of original and mixed training samples.

use idml::commands::{evaluate_checkpoint, load_splits};
use idml::config::RunConfig;
use idml::eval::TestMetric;
use idml::train::Trainer;

pub fn evaluate(epochs: usize) -> idml::Result<()> {
    let overrides = vec![format!("train.epochs={epochs}"), "metric.tau=1.0".to_string()];
    let cfg = RunConfig::resolve(None, &overrides, Some(1))?;
    let (train, test) = load_splits(&cfg)?;
    let mut trainer = Trainer::new(&cfg, &train)?;
    trainer.fit(|_, _| Ok(()))?;
    let ck = trainer.checkpoint()?;
    for mode in [TestMetric::Euclidean, TestMetric::Ism] {
        let mut c = cfg.clone();
        c.eval.test_metric = mode;
        let report = evaluate_checkpoint(&c, &ck, &train, &test)?;
        println!("{}", report.to_text());
    }
    Ok(())
}

pub fn run_example() -> idml::Result<()> {
    evaluate(2)
}

#[allow(dead_code)]
fn main() -> idml::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(30);
    evaluate(epochs)
}
