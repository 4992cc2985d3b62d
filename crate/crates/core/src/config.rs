//! Run configuration: one JSON document, overridable by `key=value` pairs.
//!
//! Precedence is overrides > file > defaults. Keys are dotted paths into the
//! document, e.g. `metric.tau=3` or `sweep.gammas=[0,1,2]`; values are parsed
//! as JSON and fall back to plain strings.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::SyntheticSpec;
use crate::encoder::{EncoderSpec, OptimizerConfig};
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::loss::LossConfig;
use crate::metric::{CosineForm, MetricMode, MetricParams, PairMetric};
use crate::mixer::MixConfig;
use crate::sampler::MiningConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    #[default]
    Synthetic,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub source: DataSource,
    pub synthetic: SyntheticSpec,
    pub csv_path: Option<PathBuf>,
    /// Fraction of classes (lowest ids first) used for training. Overrides
    /// the synthetic spec's own value so that blends and split agree.
    pub train_class_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            synthetic: SyntheticSpec::default(),
            csv_path: None,
            train_class_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub metric_mode: MetricMode,
    pub cosine_form: CosineForm,
    /// Keep the uncertainty head at its initial values.
    pub freeze_uncertainty: bool,
    pub shuffle_seed: u64,
    pub proxy_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 120,
            metric_mode: MetricMode::Introspective,
            cosine_form: CosineForm::Similar,
            freeze_uncertainty: false,
            shuffle_seed: 0,
            proxy_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub gammas: Vec<f64>,
    pub taus: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            gammas: vec![0.0, 1.0, 2.0, 3.0, 4.0],
            taus: vec![1.0, 3.0, 5.0, 7.0, 9.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradcheckConfig {
    /// Random cases per section.
    pub cases: usize,
    pub seed: u64,
    pub step: f64,
    pub tolerance: f64,
    /// Flip the sign of one analytic gradient; used to test the checker.
    pub inject_sign_bug: bool,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            cases: 150,
            seed: 0,
            step: 1e-5,
            tolerance: 1e-5,
            inject_sign_bug: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub encoder: EncoderSpec,
    pub metric: MetricParams,
    pub loss: LossConfig,
    pub mining: MiningConfig,
    pub mix: MixConfig,
    pub optimizer: OptimizerConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
    pub gradcheck: GradcheckConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: DataConfig::default(),
            encoder: EncoderSpec {
                normalize_semantic: true,
                ..EncoderSpec::default()
            },
            metric: MetricParams::default(),
            loss: LossConfig::default(),
            mining: MiningConfig::default(),
            mix: MixConfig::default(),
            optimizer: OptimizerConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            sweep: SweepConfig::default(),
            gradcheck: GradcheckConfig::default(),
        }
    }
}

fn merge(base: &mut Value, over: Value, path: &str) -> Result<()> {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                let sub = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                let slot = b
                    .get_mut(&k)
                    .ok_or_else(|| Error::InvalidParameter(format!("unknown config key {sub}")))?;
                merge(slot, v, &sub)?;
            }
            Ok(())
        }
        (b, o) => {
            *b = o;
            Ok(())
        }
    }
}

/// Applies one `dotted.key=value` override to a JSON document.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment.split_once('=').ok_or_else(|| {
        Error::InvalidParameter(format!("override {assignment:?} is not key=value"))
    })?;
    let value: Value =
        serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
    let mut slot = &mut *doc;
    for part in key.trim().split('.') {
        slot = slot
            .get_mut(part)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown config key {key}")))?;
    }
    *slot = value;
    Ok(())
}

impl RunConfig {
    /// Defaults, then the file, then overrides, then `seed` if given.
    pub fn resolve(file: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<Self> {
        let mut doc = serde_json::to_value(Self::default())?;
        if let Some(path) = file {
            let text = fs::read_to_string(path).map_err(|e| {
                Error::InvalidParameter(format!("cannot read config {}: {e}", path.display()))
            })?;
            merge(&mut doc, serde_json::from_str(&text)?, "")?;
        }
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let mut cfg: RunConfig = serde_json::from_value(doc)?;
        if let Some(s) = seed {
            cfg.set_seed(s);
        }
        Ok(cfg)
    }

    /// Derives every component seed from one base seed.
    pub fn set_seed(&mut self, seed: u64) {
        self.data.synthetic.seed = seed;
        self.encoder.init_seed = seed.wrapping_add(1);
        self.mix.rng_seed = seed.wrapping_add(2);
        self.mining.rng_seed = seed.wrapping_add(3);
        self.train.shuffle_seed = seed.wrapping_add(4);
        self.train.proxy_seed = seed.wrapping_add(5);
        self.eval.kmeans.seed = seed.wrapping_add(6);
        self.gradcheck.seed = seed.wrapping_add(7);
    }

    pub fn seeds(&self) -> BTreeMap<String, u64> {
        [
            ("data", self.data.synthetic.seed),
            ("init", self.encoder.init_seed),
            ("mix", self.mix.rng_seed),
            ("mining", self.mining.rng_seed),
            ("shuffle", self.train.shuffle_seed),
            ("proxy", self.train.proxy_seed),
            ("kmeans", self.eval.kmeans.seed),
            ("gradcheck", self.gradcheck.seed),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn pair_metric(&self) -> PairMetric {
        PairMetric {
            mode: self.train.metric_mode,
            params: self.metric,
            cosine_form: self.train.cosine_form,
        }
    }

    /// Checks every range and referenced file before any work starts.
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidParameter(m));
        match self.data.source {
            DataSource::Synthetic => {
                let mut spec = self.data.synthetic.clone();
                spec.train_class_fraction = self.data.train_class_fraction;
                spec.validate()?;
                if spec.feature_dim != self.encoder.input_dim {
                    return fail(format!(
                        "feature_dim {} does not match encoder input_dim {}",
                        spec.feature_dim, self.encoder.input_dim
                    ));
                }
            }
            DataSource::Csv => match &self.data.csv_path {
                Some(p) if p.is_file() => {}
                Some(p) => return fail(format!("csv file {} does not exist", p.display())),
                None => return fail("data.source is csv but data.csv_path is unset".into()),
            },
        }
        if !(self.data.train_class_fraction > 0.0 && self.data.train_class_fraction < 1.0) {
            return fail(format!(
                "train_class_fraction must lie in (0, 1), got {}",
                self.data.train_class_fraction
            ));
        }
        self.encoder.validate()?;
        self.metric.validate()?;
        self.loss.validate()?;
        self.mining.validate()?;
        self.mix.validate()?;
        self.optimizer.validate()?;
        self.eval.histogram.validate()?;
        if self.train.batch_size < 2 {
            return fail(format!("batch_size must be >= 2, got {}", self.train.batch_size));
        }
        if self.eval.kmeans.restarts == 0 || self.eval.kmeans.max_iters == 0 {
            return fail("k-means restarts and max_iters must be >= 1".into());
        }
        if self.eval.recall_ks.contains(&0) {
            return fail("recall cut-offs must be >= 1".into());
        }
        let g = &self.gradcheck;
        if !(g.step > 0.0 && g.tolerance > 0.0) || g.cases == 0 {
            return fail("gradcheck needs step > 0, tolerance > 0 and cases >= 1".into());
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
