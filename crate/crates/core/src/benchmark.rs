//! Paired baseline-versus-introspective runs on the synthetic benchmark.
//!
//! For every seed the same configuration is trained twice, once with the
//! plain Euclidean metric and once with the introspective metric, sharing
//! data, initialization and mining seeds. The introspective checkpoint is
//! evaluated under both test metrics.

use crate::commands::{evaluate_checkpoint, load_splits};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::eval::TestMetric;
use crate::metric::MetricMode;
use crate::train::{EpochRecord, Trainer};

/// Settings the benchmark uses on top of the library defaults.
pub const BENCHMARK_OVERRIDES: &[&str] = &["metric.tau=1.0", "metric.gamma=0.0"];

#[derive(Debug, Clone, PartialEq)]
pub struct SeedResult {
    pub seed: u64,
    pub baseline_recall_at_1: f64,
    pub idml_recall_at_1: f64,
    /// Introspective checkpoint ranked by the introspective distance.
    pub idml_ism_recall_at_1: f64,
    pub baseline_log: Vec<EpochRecord>,
    pub idml_log: Vec<EpochRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkReport {
    pub seeds: Vec<SeedResult>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

impl BenchmarkReport {
    pub fn mean_baseline(&self) -> f64 {
        mean(self.seeds.iter().map(|s| s.baseline_recall_at_1))
    }

    pub fn mean_idml(&self) -> f64 {
        mean(self.seeds.iter().map(|s| s.idml_recall_at_1))
    }

    pub fn mean_idml_ism(&self) -> f64 {
        mean(self.seeds.iter().map(|s| s.idml_ism_recall_at_1))
    }

    /// Mean over seeds of `idml - baseline` Recall@1.
    pub fn paired_improvement(&self) -> f64 {
        mean(
            self.seeds
                .iter()
                .map(|s| s.idml_recall_at_1 - s.baseline_recall_at_1),
        )
    }

    /// Per-epoch `(original, mixed)` mean uncertainty norms, averaged over
    /// seeds.
    pub fn mean_curve(&self, idml: bool) -> Vec<(f64, f64)> {
        let logs: Vec<&Vec<EpochRecord>> = self
            .seeds
            .iter()
            .map(|s| if idml { &s.idml_log } else { &s.baseline_log })
            .collect();
        let epochs = logs.iter().map(|l| l.len()).min().unwrap_or(0);
        (0..epochs)
            .map(|e| {
                (
                    mean(logs.iter().map(|l| l[e].u_norm_original)),
                    mean(logs.iter().map(|l| l[e].u_norm_mixed)),
                )
            })
            .collect()
    }
}

/// Largest ratio of any value in the second half of `curve` to the value at
/// the end of the first half. At most `1 + tol` means the curve is
/// non-increasing over that window within a relative band `tol`.
pub fn late_rise(curve: &[f64]) -> f64 {
    if curve.len() < 2 {
        return 1.0;
    }
    let half = curve.len() / 2;
    let reference = curve[half - 1];
    curve[half..]
        .iter()
        .map(|v| v / reference)
        .fold(f64::NEG_INFINITY, f64::max)
}

fn train_and_score(cfg: &RunConfig) -> Result<(Vec<EpochRecord>, f64, Option<f64>)> {
    let (train, test) = load_splits(cfg)?;
    let mut trainer = Trainer::new(cfg, &train)?;
    let log = trainer.fit(|_, _| Ok(()))?;
    let ck = trainer.checkpoint()?;
    let recall = |mode: TestMetric| -> Result<f64> {
        let mut c = cfg.clone();
        c.eval.test_metric = mode;
        evaluate_checkpoint(&c, &ck, &train, &test)?
            .recall_at(1)
            .ok_or_else(|| Error::InvalidParameter("test split too small for Recall@1".into()))
    };
    let euclid = recall(TestMetric::Euclidean)?;
    let ism = match cfg.train.metric_mode {
        MetricMode::Introspective => Some(recall(TestMetric::Ism)?),
        MetricMode::Euclidean => None,
    };
    Ok((log, euclid, ism))
}

/// Runs the paired experiment for each seed. `overrides` are applied after
/// [`BENCHMARK_OVERRIDES`].
pub fn run_benchmark(seeds: &[u64], overrides: &[String]) -> Result<BenchmarkReport> {
    let mut all: Vec<String> = BENCHMARK_OVERRIDES.iter().map(|s| s.to_string()).collect();
    all.extend_from_slice(overrides);
    let mut results = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut cfg = RunConfig::resolve(None, &all, Some(seed))?;
        cfg.validate()?;
        cfg.train.metric_mode = MetricMode::Euclidean;
        let (baseline_log, baseline, _) = train_and_score(&cfg)?;
        cfg.train.metric_mode = MetricMode::Introspective;
        let (idml_log, idml, ism) = train_and_score(&cfg)?;
        results.push(SeedResult {
            seed,
            baseline_recall_at_1: baseline,
            idml_recall_at_1: idml,
            idml_ism_recall_at_1: ism.expect("introspective run reports ism recall"),
            baseline_log,
            idml_log,
        });
    }
    Ok(BenchmarkReport { seeds: results })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn late_rise_cases() {
        assert_eq!(late_rise(&[4.0, 3.0, 2.0, 1.0]), 2.0 / 3.0);
        assert_eq!(late_rise(&[1.0, 1.0, 1.1, 1.0]), 1.1);
        assert_eq!(late_rise(&[5.0]), 1.0);
    }

    #[test]
    fn tiny_benchmark_runs() {
        let o = vec![
            "train.epochs=2".to_string(),
            "data.synthetic.samples_per_class=20".to_string(),
        ];
        let r = run_benchmark(&[0], &o).unwrap();
        assert_eq!(r.seeds.len(), 1);
        assert_eq!(r.mean_curve(true).len(), 2);
        let s = &r.seeds[0];
        assert!((0.0..=1.0).contains(&s.idml_recall_at_1));
    }
}
