//! Recall@1 over a grid of introspective bias and temperature, as written by
//! `idml sweep` to `sweep_grid.csv`.
//!
//! `cargo run --release --example sweep -- [epochs]`

use idml::commands::cmd_sweep;
use idml::config::RunConfig;

pub fn sweep(epochs: usize, gammas: &str, taus: &str) -> idml::Result<()> {
    let overrides = vec![
        format!("train.epochs={epochs}"),
        format!("sweep.gammas={gammas}"),
        format!("sweep.taus={taus}"),
    ];
    let cfg = RunConfig::resolve(None, &overrides, Some(0))?;
    let out = std::env::temp_dir().join("idml-examples").join("sweep");
    let summary = cmd_sweep(&cfg, &out)?;
    print!("{}", summary.to_csv());
    Ok(())
}

pub fn run_example() -> idml::Result<()> {
    sweep(1, "[0.0, 1.0]", "[1.0, 5.0]")
}

#[allow(dead_code)]
fn main() -> idml::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(20);
    sweep(epochs, "[0.0, 0.5, 1.0]", "[1.0, 3.0, 5.0]")
}
