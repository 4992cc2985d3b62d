//! The desk-scale experiment: for each seed, a margin loss with
//! distance-weighted sampling is trained once with the Euclidean metric and
//! once with the introspective metric on the same data and initialization.
//! Prints Recall@1 for both, and the uncertainty curves of original and
//! blended training samples.
//!
//! `cargo run --release --example benchmark -- [seeds] [epochs]`
//! (defaults 5 and 100, under a minute in release mode)

use idml::benchmark::{late_rise, run_benchmark};

pub fn benchmark(n_seeds: u64, epochs: usize) -> idml::Result<()> {
    let seeds: Vec<u64> = (0..n_seeds).collect();
    let report = run_benchmark(&seeds, &[format!("train.epochs={epochs}")])?;
    for s in &report.seeds {
        println!(
            "seed {}: baseline {:.4}  idml {:.4}  idml ranked by D_IN {:.4}",
            s.seed, s.baseline_recall_at_1, s.idml_recall_at_1, s.idml_ism_recall_at_1
        );
    }
    println!(
        "mean Recall@1: baseline {:.4}  idml {:.4}  paired gain {:+.4}",
        report.mean_baseline(),
        report.mean_idml(),
        report.paired_improvement()
    );

    let curve = report.mean_curve(true);
    let step = (curve.len() / 10).max(1);
    println!("epoch  |u| original  |u| mixed");
    for (e, (o, m)) in curve.iter().enumerate().filter(|(e, _)| e % step == step - 1) {
        println!("{:>5}  {:<12.4}  {:.4}", e + 1, o, m);
    }
    let originals: Vec<f64> = curve.iter().map(|c| c.0).collect();
    let mixed: Vec<f64> = curve.iter().map(|c| c.1).collect();
    println!(
        "second half peak relative to mid point: original {:.3}, mixed {:.3}",
        late_rise(&originals),
        late_rise(&mixed)
    );
    Ok(())
}

pub fn run_example() -> idml::Result<()> {
    benchmark(1, 2)
}

#[allow(dead_code)]
fn main() -> idml::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<u64>().ok());
    let seeds = args.next().flatten().unwrap_or(5);
    let epochs = args.next().flatten().unwrap_or(100) as usize;
    benchmark(seeds, epochs)
}
