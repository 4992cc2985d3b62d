//! Writes the synthetic dataset as CSV with its metadata sidecar, reads it
//! back, and trains from the file instead of the generator.

use idml::commands::{cmd_gen_data, cmd_train};
use idml::config::RunConfig;
use idml::data::{load_csv, split_zero_shot};

pub fn round_trip(epochs: usize) -> idml::Result<()> {
    let dir = std::env::temp_dir().join("idml-examples").join("csv");
    let cfg = RunConfig::resolve(None, &[], Some(4))?;
    let meta = cmd_gen_data(&cfg, &dir)?;
    println!(
        "wrote {} samples ({} blends) over classes {:?}, sha256 {}",
        meta.n_samples, meta.n_mixed, meta.classes, meta.csv_sha256
    );

    let csv = dir.join("data.csv");
    let ds = load_csv(&csv)?;
    let (train, test) = split_zero_shot(&ds, 0.5)?;
    println!("train {} samples, test {} samples", train.len(), test.len());
    let first = ds.labels.iter().position(|l| l.is_mixed()).expect("a blend");
    println!("first blend at row {first} with label {}", ds.labels[first]);

    let overrides = vec![
        "data.source=\"csv\"".to_string(),
        format!("data.csv_path={}", serde_json::to_string(&csv)?),
        format!("train.epochs={epochs}"),
    ];
    let from_file = RunConfig::resolve(None, &overrides, Some(4))?;
    let summary = cmd_train(&from_file, &dir.join("run"))?;
    let last = summary.log.last().expect("an epoch");
    println!("trained from CSV: epoch {} loss {:.4}", last.epoch, last.loss_mean);
    Ok(())
}

pub fn run_example() -> idml::Result<()> {
    round_trip(1)
}

#[allow(dead_code)]
fn main() -> idml::Result<()> {
    round_trip(5)
}
