//! Central finite-difference checks of every analytic gradient: the pair
//! metrics, the seven losses (embeddings and proxies) and the encoder
//! parameters through a loss.
//!
//! Mining is done once at the unperturbed point and then held fixed. Cases
//! whose loss has a hinge, clamp or ReLU within `KINK_MARGIN` of its kink are
//! redrawn.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::GradcheckConfig;
use crate::encoder::{backward, forward_batch, init_params, EncoderSpec, ParamStore};
use crate::error::Result;
use crate::loss::{self, EmbeddingGrads, LossConfig, LossVariant, ProxyBank};
use crate::metric::{
    grad_introspective_cosine, grad_introspective_distance, introspective_cosine,
    introspective_cosine_dis, introspective_distance, CosineForm, MetricMode, MetricParams,
    PairGradient, PairMetric, PairedEmbedding,
};
use crate::mixer::LabelSet;
use crate::sampler::MiningConfig;

/// Cases closer than this to a kink are redrawn.
pub const KINK_MARGIN: f64 = 1e-3;
/// Gradient norms below this are compared absolutely. Central differences
/// of an O(1) function carry roundoff near `1e-11`, so smaller gradients
/// cannot be resolved in relative terms.
pub const REL_FLOOR: f64 = 1e-4;
/// Encoder cases with a raw semantic output shorter than this are redrawn.
pub const MIN_SEMANTIC_NORM: f64 = 0.1;

/// `||a - n|| / max(||a||, ||n||, REL_FLOOR)`.
pub fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    diff / norm(analytic).max(norm(numeric)).max(REL_FLOOR)
}

/// Central differences of `f` at `x`.
pub fn numeric_gradient(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> Result<f64>) -> Result<Vec<f64>> {
    let mut work = x.to_vec();
    let mut g = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        work[i] = x[i] + h;
        let up = f(&work)?;
        work[i] = x[i] - h;
        let down = f(&work)?;
        work[i] = x[i];
        g.push((up - down) / (2.0 * h));
    }
    Ok(g)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionReport {
    pub name: String,
    pub cases: usize,
    pub redrawn: usize,
    pub max_rel_error: f64,
    pub worst_case: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub sections: Vec<SectionReport>,
}

impl GradcheckReport {
    pub fn total_cases(&self) -> usize {
        self.sections.iter().map(|s| s.cases).sum()
    }

    pub fn worst(&self) -> Option<&SectionReport> {
        self.sections
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }

    pub fn passed(&self) -> bool {
        self.sections
            .iter()
            .all(|s| s.cases > 0 && s.max_rel_error <= self.tolerance)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for s in &self.sections {
            writeln!(
                out,
                "{}.max_rel_error={:?}\n{}.cases={}",
                s.name, s.max_rel_error, s.name, s.cases
            )
            .expect("write to string");
        }
        writeln!(out, "tolerance={:?}", self.tolerance).expect("write to string");
        writeln!(out, "passed={}", self.passed()).expect("write to string");
        out
    }
}

fn gauss(rng: &mut ChaCha8Rng, scale: f64) -> f64 {
    scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
}

fn random_embedding(rng: &mut ChaCha8Rng, d_s: usize, d_u: usize) -> PairedEmbedding {
    PairedEmbedding {
        semantic: (0..d_s).map(|_| gauss(rng, 1.0)).collect(),
        uncertainty: (0..d_u).map(|_| gauss(rng, 0.5)).collect(),
    }
}

fn random_params(rng: &mut ChaCha8Rng) -> MetricParams {
    MetricParams {
        gamma: rng.random_range(0.0..2.0),
        tau: rng.random_range(0.5..10.0),
        ..MetricParams::default()
    }
}

fn flatten_embeddings(list: &[PairedEmbedding]) -> Vec<f64> {
    list.iter()
        .flat_map(|e| e.semantic.iter())
        .chain(list.iter().flat_map(|e| e.uncertainty.iter()))
        .copied()
        .collect()
}

fn unflatten_embeddings(template: &[PairedEmbedding], flat: &[f64]) -> Vec<PairedEmbedding> {
    let mut out = template.to_vec();
    let mut k = 0;
    for e in &mut out {
        for v in &mut e.semantic {
            *v = flat[k];
            k += 1;
        }
    }
    for e in &mut out {
        for v in &mut e.uncertainty {
            *v = flat[k];
            k += 1;
        }
    }
    out
}

fn flatten_grads(g: &EmbeddingGrads) -> Vec<f64> {
    g.semantic
        .iter()
        .flatten()
        .chain(g.uncertainty.iter().flatten())
        .copied()
        .collect()
}

fn pair_flat(g: &PairGradient) -> Vec<f64> {
    [&g.semantic_a, &g.semantic_b, &g.uncertainty_a, &g.uncertainty_b]
        .into_iter()
        .flatten()
        .copied()
        .collect()
}

struct Section {
    report: SectionReport,
}

impl Section {
    fn new(name: &str) -> Self {
        Self {
            report: SectionReport {
                name: name.into(),
                cases: 0,
                redrawn: 0,
                max_rel_error: 0.0,
                worst_case: 0,
            },
        }
    }

    fn record(&mut self, err: f64) {
        if err > self.report.max_rel_error || err.is_nan() {
            self.report.max_rel_error = if err.is_nan() { f64::INFINITY } else { err };
            self.report.worst_case = self.report.cases;
        }
        self.report.cases += 1;
    }
}

fn metric_section(cfg: &GradcheckConfig, rng: &mut ChaCha8Rng) -> Result<SectionReport> {
    let mut sec = Section::new("metric");
    let (d_s, d_u) = (4, 3);
    for case in 0..cfg.cases {
        let a = random_embedding(rng, d_s, d_u);
        let b = random_embedding(rng, d_s, d_u);
        let p = random_params(rng);
        let which = case % 3;
        let form = if which == 2 { CosineForm::Dissimilar } else { CosineForm::Similar };
        let g = match which {
            0 => grad_introspective_distance(&a, &b, &p)?,
            _ => grad_introspective_cosine(&a, &b, &p, form)?,
        };
        let mut analytic = pair_flat(&g);
        if cfg.inject_sign_bug {
            analytic.iter_mut().for_each(|v| *v = -*v);
        }
        let x = flatten_embeddings(&[a.clone(), b.clone()]);
        let numeric = numeric_gradient(&x, cfg.step, |v| {
            let e = unflatten_embeddings(&[a.clone(), b.clone()], v);
            match which {
                0 => introspective_distance(&e[0], &e[1], &p),
                1 => introspective_cosine(&e[0], &e[1], &p),
                _ => introspective_cosine_dis(&e[0], &e[1], &p),
            }
        })?;
        // pair_flat is (s_a, s_b, u_a, u_b), matching flatten_embeddings
        sec.record(rel_error(&analytic, &numeric));
    }
    Ok(sec.report)
}

struct LossCase {
    cfg: LossConfig,
    batch: Vec<PairedEmbedding>,
    labels: Vec<LabelSet>,
    proxies: Option<ProxyBank>,
    metric: PairMetric,
    mining: MiningConfig,
}

fn random_loss_case(variant: LossVariant, case: usize, rng: &mut ChaCha8Rng, d_s: usize, d_u: usize) -> Result<LossCase> {
    let n = rng.random_range(6..=9);
    let n_classes = 3u32;
    let mut labels: Vec<LabelSet> = (0..n)
        .map(|i| LabelSet::single(i as u32 % n_classes))
        .collect();
    // one mixed sample
    let (x, y) = (rng.random_range(0..n_classes), rng.random_range(0..n_classes));
    if x != y {
        labels[n - 1] = LabelSet::pair(x, y)?;
    }
    let batch: Vec<PairedEmbedding> = (0..n).map(|_| random_embedding(rng, d_s, d_u)).collect();
    let proxies = if variant.uses_proxies() {
        Some(ProxyBank::new(
            (0..n_classes).map(|_| random_embedding(rng, d_s, d_u)).collect(),
            (0..n_classes).collect(),
        )?)
    } else {
        None
    };
    let mode = if case % 5 == 4 { MetricMode::Euclidean } else { MetricMode::Introspective };
    let cosine_form = if case % 2 == 1 { CosineForm::Dissimilar } else { CosineForm::Similar };
    Ok(LossCase {
        cfg: LossConfig {
            fidelity_mode: case % 4 == 3,
            ..LossConfig::for_variant(variant)
        },
        batch,
        labels,
        proxies,
        metric: PairMetric {
            mode,
            params: random_params(rng),
            cosine_form,
        },
        mining: MiningConfig {
            n_dim: d_s,
            rng_seed: rng.random(),
            ..MiningConfig::default()
        },
    })
}

fn loss_section(variant: LossVariant, cfg: &GradcheckConfig, rng: &mut ChaCha8Rng) -> Result<SectionReport> {
    let mut sec = Section::new(variant.name());
    let (d_s, d_u) = (4, 3);
    let mut case = 0;
    while sec.report.cases < cfg.cases && case < 20 * cfg.cases {
        let c = random_loss_case(variant, case, rng, d_s, d_u)?;
        case += 1;
        let mined = loss::mine(&c.cfg, &c.batch, &c.labels, &c.metric, &c.mining)?;
        let out = loss::evaluate(&c.cfg, &c.batch, &c.labels, c.proxies.as_ref(), &c.metric, &mined)?;
        if out.kink_margin < KINK_MARGIN {
            sec.report.redrawn += 1;
            continue;
        }
        let n_batch = flatten_embeddings(&c.batch).len();
        let mut x = flatten_embeddings(&c.batch);
        let mut analytic = flatten_grads(&out.grads);
        if let (Some(bank), Some(pg)) = (&c.proxies, &out.proxy_grads) {
            x.extend(flatten_embeddings(&bank.proxies));
            analytic.extend(flatten_grads(pg));
        }
        let numeric = numeric_gradient(&x, cfg.step, |v| {
            let batch = unflatten_embeddings(&c.batch, &v[..n_batch]);
            let bank = c.proxies.as_ref().map(|b| ProxyBank {
                    proxies: unflatten_embeddings(&b.proxies, &v[n_batch..]),
                    labels: b.labels.clone(),
                });
            Ok(loss::evaluate(&c.cfg, &batch, &c.labels, bank.as_ref(), &c.metric, &mined)?.value)
        })?;
        sec.record(rel_error(&analytic, &numeric));
    }
    Ok(sec.report)
}

fn encoder_section(cfg: &GradcheckConfig, rng: &mut ChaCha8Rng) -> Result<SectionReport> {
    let mut sec = Section::new("encoder");
    let mut case = 0;
    while sec.report.cases < cfg.cases && case < 20 * cfg.cases {
        let variant = LossVariant::ALL[case % LossVariant::ALL.len()];
        let spec = EncoderSpec {
            input_dim: 5,
            hidden_dims: if case % 2 == 0 { vec![6] } else { vec![6, 5] },
            d_s: 4,
            d_u: 3,
            normalize_semantic: case % 3 != 0,
            init_seed: rng.random(),
            uncertainty_init_scale: 1.0,
            ..EncoderSpec::default()
        };
        let c = random_loss_case(variant, case, rng, spec.d_s, spec.d_u)?;
        case += 1;
        let params = init_params(&spec)?;
        let xs: Vec<Vec<f64>> = (0..c.batch.len())
            .map(|_| (0..spec.input_dim).map(|_| gauss(rng, 1.0)).collect())
            .collect();
        // Nearly dead ReLU layers leave a near-zero semantic vector, where
        // normalization and cosine curve too sharply for the step size.
        let Ok((emb, trace)) = forward_batch(&spec, &params, &xs) else {
            sec.report.redrawn += 1;
            continue;
        };
        if trace.min_semantic_norm() < MIN_SEMANTIC_NORM || min_pair_distance(&emb) < KINK_MARGIN {
            sec.report.redrawn += 1;
            continue;
        }
        let mined = loss::mine(&c.cfg, &emb, &c.labels, &c.metric, &c.mining)?;
        let out = loss::evaluate(&c.cfg, &emb, &c.labels, c.proxies.as_ref(), &c.metric, &mined)?;
        if out.kink_margin < KINK_MARGIN || trace.min_abs_preactivation() < KINK_MARGIN {
            sec.report.redrawn += 1;
            continue;
        }
        let analytic = backward(&spec, &params, &trace, &out.grads)?.flatten();
        let x = params.flatten();
        let numeric = numeric_gradient(&x, cfg.step, |v| {
            let p = unflatten_params(&params, v);
            let (e, _) = forward_batch(&spec, &p, &xs)?;
            Ok(loss::evaluate(&c.cfg, &e, &c.labels, c.proxies.as_ref(), &c.metric, &mined)?.value)
        })?;
        sec.record(rel_error(&analytic, &numeric));
    }
    Ok(sec.report)
}

// Coinciding semantic vectors put the pair at the kink of the norm.
fn min_pair_distance(emb: &[PairedEmbedding]) -> f64 {
    let mut m = f64::INFINITY;
    for i in 0..emb.len() {
        for j in i + 1..emb.len() {
            let d: f64 = emb[i]
                .semantic
                .iter()
                .zip(&emb[j].semantic)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            m = m.min(d.sqrt());
        }
    }
    m
}

fn unflatten_params(template: &ParamStore, flat: &[f64]) -> ParamStore {
    let mut p = template.clone();
    let mut k = 0;
    for t in &mut p.tensors {
        for v in &mut t.data {
            *v = flat[k];
            k += 1;
        }
    }
    p
}

/// Runs every section: the pair metrics, each loss, then the encoder.
pub fn run_gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sections = vec![metric_section(cfg, &mut rng)?];
    for v in LossVariant::ALL {
        sections.push(loss_section(v, cfg, &mut rng)?);
    }
    sections.push(encoder_section(cfg, &mut rng)?);
    Ok(GradcheckReport {
        tolerance: cfg.tolerance,
        sections,
    })
}
