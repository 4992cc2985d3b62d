//! Trains an encoder on the synthetic benchmark data and prints the
//! per-epoch loss and uncertainty levels. Writes `checkpoint.bin` and
//! `train_log.jsonl` like `idml train`.
//!
//! `cargo run --release --example train -- [epochs]`

use std::path::PathBuf;

use idml::commands::cmd_train;
use idml::config::RunConfig;

fn out_dir(name: &str) -> PathBuf {
    std::env::temp_dir().join("idml-examples").join(name)
}

pub fn train(epochs: usize) -> idml::Result<PathBuf> {
    let overrides = vec![format!("train.epochs={epochs}"), "metric.tau=1.0".to_string()];
    let cfg = RunConfig::resolve(None, &overrides, Some(0))?;
    let out = out_dir("train");
    let summary = cmd_train(&cfg, &out)?;
    println!("epoch  loss        |u| original  |u| mixed");
    for r in &summary.log {
        println!(
            "{:>5}  {:<10.4}  {:<12.4}  {:.4}",
            r.epoch, r.loss_mean, r.u_norm_original, r.u_norm_mixed
        );
    }
    println!("wrote {}", summary.checkpoint.display());
    Ok(out)
}

pub fn run_example() -> idml::Result<()> {
    train(3).map(|_| ())
}

#[allow(dead_code)]
fn main() -> idml::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(30);
    train(epochs).map(|_| ())
}
