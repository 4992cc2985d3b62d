//! Pairwise distances and similarities between paired embeddings.
//!
//! Every sample is a [`PairedEmbedding`]: a semantic vector `s` compared by
//! Euclidean distance or cosine similarity, and an uncertainty vector `u`.
//! For two samples the semantic distance is `alpha = ||s_a - s_b||` and the
//! similarity uncertainty is `beta = ||u_a + u_b||` (norm of the vector sum,
//! so opposing uncertainties cancel). The introspective distance weakens
//! `alpha` by `exp(-r / tau)` where `r = (beta + gamma) / alpha` is the
//! relative uncertainty of the pair.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// One sample: semantic coordinates plus an uncertainty vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedEmbedding {
    pub semantic: Vec<f64>,
    pub uncertainty: Vec<f64>,
}

impl PairedEmbedding {
    pub fn new(semantic: Vec<f64>, uncertainty: Vec<f64>) -> Result<Self> {
        let e = Self {
            semantic,
            uncertainty,
        };
        e.validate()?;
        Ok(e)
    }

    /// An embedding with an all-zero uncertainty vector of length `d_u`.
    pub fn certain(semantic: Vec<f64>, d_u: usize) -> Result<Self> {
        Self::new(semantic, vec![0.0; d_u])
    }

    pub fn validate(&self) -> Result<()> {
        if self.semantic.is_empty() || self.uncertainty.is_empty() {
            return Err(Error::InvalidParameter(
                "embedding dimensions must be at least 1".into(),
            ));
        }
        if !self
            .semantic
            .iter()
            .chain(&self.uncertainty)
            .all(|v| v.is_finite())
        {
            return Err(Error::NonFinite("embedding component".into()));
        }
        Ok(())
    }

    /// Uncertainty level `||u||`.
    pub fn uncertainty_norm(&self) -> f64 {
        norm(&self.uncertainty)
    }
}

/// Parameters of the introspective metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricParams {
    /// Introspective bias added to the pair uncertainty.
    pub gamma: f64,
    /// Weakening temperature.
    pub tau: f64,
    /// Floor on the semantic discrepancy when dividing.
    pub eps_div: f64,
}

impl Default for MetricParams {
    fn default() -> Self {
        Self {
            gamma: 0.0,
            tau: 5.0,
            eps_div: 1e-12,
        }
    }
}

impl MetricParams {
    pub fn new(gamma: f64, tau: f64) -> Result<Self> {
        let p = Self {
            gamma,
            tau,
            ..Self::default()
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "gamma must be >= 0, got {}",
                self.gamma
            )));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "tau must be > 0, got {}",
                self.tau
            )));
        }
        if !(self.eps_div > 0.0 && self.eps_div <= 1e-6) {
            return Err(Error::InvalidParameter(format!(
                "eps_div must lie in (0, 1e-6], got {}",
                self.eps_div
            )));
        }
        Ok(())
    }
}

/// Diagonal Gaussian used by the KL baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        check_dim("gaussian variance", mean.len(), var.len())?;
        if let Some(v) = var.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidParameter(format!(
                "variance components must be positive, got {v}"
            )));
        }
        Ok(Self { mean, var })
    }
}

/// Which distance a loss or index is built on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricMode {
    /// Plain Euclidean distance / cosine similarity of semantic parts.
    Euclidean,
    /// Uncertainty-weakened distance / similarity.
    #[default]
    Introspective,
}

/// How uncertainty weakens a cosine similarity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CosineForm {
    /// `1 - (1 - C) exp(-r/tau)`: uncertain pairs drift towards similar.
    #[default]
    Similar,
    /// `C exp(-r/tau)`: uncertain pairs drift towards zero similarity.
    Dissimilar,
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn alpha_unchecked(a: &PairedEmbedding, b: &PairedEmbedding) -> f64 {
    a.semantic
        .iter()
        .zip(&b.semantic)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn beta_unchecked(a: &PairedEmbedding, b: &PairedEmbedding) -> f64 {
    a.uncertainty
        .iter()
        .zip(&b.uncertainty)
        .map(|(x, y)| (x + y) * (x + y))
        .sum::<f64>()
        .sqrt()
}

fn check_pair(a: &PairedEmbedding, b: &PairedEmbedding) -> Result<()> {
    check_dim("semantic embedding", a.semantic.len(), b.semantic.len())?;
    check_dim(
        "uncertainty embedding",
        a.uncertainty.len(),
        b.uncertainty.len(),
    )
}

/// `alpha = ||s_a - s_b||`.
pub fn semantic_distance(a: &PairedEmbedding, b: &PairedEmbedding) -> Result<f64> {
    check_dim("semantic embedding", a.semantic.len(), b.semantic.len())?;
    Ok(alpha_unchecked(a, b))
}

/// `beta = ||u_a + u_b||`.
pub fn similarity_uncertainty(a: &PairedEmbedding, b: &PairedEmbedding) -> Result<f64> {
    check_dim(
        "uncertainty embedding",
        a.uncertainty.len(),
        b.uncertainty.len(),
    )?;
    Ok(beta_unchecked(a, b))
}

/// `(beta + gamma) / max(alpha, eps_div)`.
pub fn relative_uncertainty_from_parts(alpha: f64, beta: f64, p: &MetricParams) -> f64 {
    (beta + p.gamma) / alpha.max(p.eps_div)
}

pub fn relative_uncertainty(
    a: &PairedEmbedding,
    b: &PairedEmbedding,
    p: &MetricParams,
) -> Result<f64> {
    check_pair(a, b)?;
    Ok(relative_uncertainty_from_parts(
        alpha_unchecked(a, b),
        beta_unchecked(a, b),
        p,
    ))
}

/// `alpha * exp(-r/tau)` evaluated from the scalar parts.
pub fn weakened_distance(alpha: f64, beta: f64, p: &MetricParams) -> f64 {
    alpha * (-relative_uncertainty_from_parts(alpha, beta, p) / p.tau).exp()
}

pub fn introspective_distance(
    a: &PairedEmbedding,
    b: &PairedEmbedding,
    p: &MetricParams,
) -> Result<f64> {
    check_pair(a, b)?;
    Ok(weakened_distance(
        alpha_unchecked(a, b),
        beta_unchecked(a, b),
        p,
    ))
}

/// Indicator form: `alpha` when `alpha > beta + gamma`, otherwise 0.
///
/// Not differentiable; only used for diagnostics.
pub fn strict_introspective_distance(
    a: &PairedEmbedding,
    b: &PairedEmbedding,
    p: &MetricParams,
) -> Result<f64> {
    check_pair(a, b)?;
    Ok(strict_from_parts(
        alpha_unchecked(a, b),
        beta_unchecked(a, b),
        p,
    ))
}

pub fn strict_from_parts(alpha: f64, beta: f64, p: &MetricParams) -> f64 {
    if alpha - beta - p.gamma > 0.0 {
        alpha
    } else {
        0.0
    }
}

/// Cosine similarity of the semantic parts.
pub fn cosine_similarity(a: &PairedEmbedding, b: &PairedEmbedding) -> Result<f64> {
    check_dim("semantic embedding", a.semantic.len(), b.semantic.len())?;
    let (na, nb) = (norm(&a.semantic), norm(&b.semantic));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok(dot(&a.semantic, &b.semantic) / (na * nb))
}

/// Weakened cosine from the scalar parts. The cosine discrepancy `1 - C`
/// plays the role of `alpha` in the relative uncertainty.
pub fn weakened_cosine(cos: f64, beta: f64, p: &MetricParams, form: CosineForm) -> f64 {
    let r = relative_uncertainty_from_parts(1.0 - cos, beta, p);
    let decay = (-r / p.tau).exp();
    match form {
        CosineForm::Similar => 1.0 - (1.0 - cos) * decay,
        CosineForm::Dissimilar => cos * decay,
    }
}

pub fn introspective_cosine(
    a: &PairedEmbedding,
    b: &PairedEmbedding,
    p: &MetricParams,
) -> Result<f64> {
    check_pair(a, b)?;
    let c = cosine_similarity(a, b)?;
    Ok(weakened_cosine(c, beta_unchecked(a, b), p, CosineForm::Similar))
}

pub fn introspective_cosine_dis(
    a: &PairedEmbedding,
    b: &PairedEmbedding,
    p: &MetricParams,
) -> Result<f64> {
    check_pair(a, b)?;
    let c = cosine_similarity(a, b)?;
    Ok(weakened_cosine(
        c,
        beta_unchecked(a, b),
        p,
        CosineForm::Dissimilar,
    ))
}

/// KL(a || b) for diagonal Gaussians.
pub fn gaussian_kl(a: &DiagGaussian, b: &DiagGaussian) -> Result<f64> {
    check_dim("gaussian", a.mean.len(), b.mean.len())?;
    for g in [a, b] {
        check_dim("gaussian variance", g.mean.len(), g.var.len())?;
        if g.var.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidParameter(
                "variance components must be positive".into(),
            ));
        }
    }
    let mut acc = 0.0;
    for k in 0..a.mean.len() {
        let (v1, v2) = (a.var[k], b.var[k]);
        let dm = a.mean[k] - b.mean[k];
        acc += (v2 / v1).ln() + v1 / v2 + dm * dm / v2 - 1.0;
    }
    Ok(0.5 * acc)
}

/// `g(x) = exp(-x) (1 + x)`, the factor by which uncertainty shrinks the
/// semantic gradient at `tau = 1`, `gamma = 0` with `x = beta / alpha`.
pub fn grad_decay_factor(x: f64) -> f64 {
    (-x).exp() * (1.0 + x)
}

/// Value of a pair metric plus its partials with respect to the semantic
/// statistic (`alpha` for distances, `C` for cosines) and `beta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Partials {
    pub value: f64,
    pub d_semantic: f64,
    pub d_beta: f64,
}

pub(crate) fn distance_partials(alpha: f64, beta: f64, p: &MetricParams) -> Partials {
    let r = relative_uncertainty_from_parts(alpha, beta, p);
    let decay = (-r / p.tau).exp();
    let value = alpha * decay;
    if alpha > p.eps_div {
        Partials {
            value,
            d_semantic: decay * (1.0 + r / p.tau),
            d_beta: -decay / p.tau,
        }
    } else {
        // Direction of d alpha / d s is undefined here.
        Partials {
            value,
            d_semantic: 0.0,
            d_beta: -alpha * decay / (p.tau * p.eps_div),
        }
    }
}

pub(crate) fn cosine_partials(cos: f64, beta: f64, p: &MetricParams, form: CosineForm) -> Partials {
    let disc = 1.0 - cos;
    let floored = disc <= p.eps_div;
    let denom = disc.max(p.eps_div);
    let r = (beta + p.gamma) / denom;
    let decay = (-r / p.tau).exp();
    match form {
        CosineForm::Similar => Partials {
            value: 1.0 - disc * decay,
            d_semantic: if floored {
                decay
            } else {
                decay * (1.0 + r / p.tau)
            },
            d_beta: disc * decay / (p.tau * denom),
        },
        CosineForm::Dissimilar => Partials {
            value: cos * decay,
            d_semantic: if floored {
                decay
            } else {
                decay * (1.0 - cos * r / (p.tau * denom))
            },
            d_beta: -cos * decay / (p.tau * denom),
        },
    }
}

/// Gradient buffers for one embedding.
pub(crate) struct GradSlot<'a> {
    pub semantic: &'a mut [f64],
    pub uncertainty: &'a mut [f64],
}

/// Adds `weight * d(metric)/d(.)` for both samples of a pair.
///
/// `cosine` selects the geometry of the semantic statistic.
pub(crate) fn scatter_pair(
    a: &PairedEmbedding,
    b: &PairedEmbedding,
    parts: &Partials,
    cosine: bool,
    weight: f64,
    ga: GradSlot<'_>,
    gb: GradSlot<'_>,
) {
    let ws = weight * parts.d_semantic;
    if ws != 0.0 {
        if cosine {
            let na = norm(&a.semantic);
            let nb = norm(&b.semantic);
            let c = dot(&a.semantic, &b.semantic) / (na * nb);
            let inv = 1.0 / (na * nb);
            let (ca, cb) = (c / (na * na), c / (nb * nb));
            for k in 0..a.semantic.len() {
                let (sa, sb) = (a.semantic[k], b.semantic[k]);
                ga.semantic[k] += ws * (sb * inv - ca * sa);
                gb.semantic[k] += ws * (sa * inv - cb * sb);
            }
        } else {
            let alpha = alpha_unchecked(a, b);
            if alpha > 0.0 {
                let f = ws / alpha;
                for k in 0..a.semantic.len() {
                    let d = f * (a.semantic[k] - b.semantic[k]);
                    ga.semantic[k] += d;
                    gb.semantic[k] -= d;
                }
            }
        }
    }
    let wb = weight * parts.d_beta;
    if wb != 0.0 {
        let beta = beta_unchecked(a, b);
        // Zero subgradient at u_a + u_b = 0.
        if beta > 0.0 {
            let f = wb / beta;
            for k in 0..a.uncertainty.len() {
                let d = f * (a.uncertainty[k] + b.uncertainty[k]);
                ga.uncertainty[k] += d;
                gb.uncertainty[k] += d;
            }
        }
    }
}

/// Value and gradients of a pair metric with respect to both samples.
#[derive(Debug, Clone, PartialEq)]
pub struct PairGradient {
    pub value: f64,
    pub semantic_a: Vec<f64>,
    pub semantic_b: Vec<f64>,
    pub uncertainty_a: Vec<f64>,
    pub uncertainty_b: Vec<f64>,
}

impl PairGradient {
    fn zeros(value: f64, d_s: usize, d_u: usize) -> Self {
        Self {
            value,
            semantic_a: vec![0.0; d_s],
            semantic_b: vec![0.0; d_s],
            uncertainty_a: vec![0.0; d_u],
            uncertainty_b: vec![0.0; d_u],
        }
    }

    fn slots(&mut self) -> (GradSlot<'_>, GradSlot<'_>) {
        (
            GradSlot {
                semantic: &mut self.semantic_a,
                uncertainty: &mut self.uncertainty_a,
            },
            GradSlot {
                semantic: &mut self.semantic_b,
                uncertainty: &mut self.uncertainty_b,
            },
        )
    }
}

/// Analytic gradient of [`introspective_distance`].
///
/// When `alpha <= eps_div` the semantic gradients are zero; when
/// `beta == 0` the uncertainty gradients are zero.
pub fn grad_introspective_distance(
    a: &PairedEmbedding,
    b: &PairedEmbedding,
    p: &MetricParams,
) -> Result<PairGradient> {
    PairMetric::introspective(*p).distance_gradient(a, b)
}

/// Analytic gradient of [`introspective_cosine`] (or the dissimilar form).
pub fn grad_introspective_cosine(
    a: &PairedEmbedding,
    b: &PairedEmbedding,
    p: &MetricParams,
    form: CosineForm,
) -> Result<PairGradient> {
    PairMetric {
        mode: MetricMode::Introspective,
        params: *p,
        cosine_form: form,
    }
    .similarity_gradient(a, b)
}

/// A pair metric as consumed by the losses, samplers and retrieval index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairMetric {
    pub mode: MetricMode,
    pub params: MetricParams,
    pub cosine_form: CosineForm,
}

impl Default for PairMetric {
    fn default() -> Self {
        Self::introspective(MetricParams::default())
    }
}

impl PairMetric {
    pub fn euclidean() -> Self {
        Self {
            mode: MetricMode::Euclidean,
            params: MetricParams::default(),
            cosine_form: CosineForm::Similar,
        }
    }

    pub fn introspective(params: MetricParams) -> Self {
        Self {
            mode: MetricMode::Introspective,
            params,
            cosine_form: CosineForm::Similar,
        }
    }

    pub(crate) fn distance_parts(&self, a: &PairedEmbedding, b: &PairedEmbedding) -> Partials {
        let alpha = alpha_unchecked(a, b);
        match self.mode {
            MetricMode::Euclidean => Partials {
                value: alpha,
                d_semantic: 1.0,
                d_beta: 0.0,
            },
            MetricMode::Introspective => {
                distance_partials(alpha, beta_unchecked(a, b), &self.params)
            }
        }
    }

    pub(crate) fn similarity_parts(
        &self,
        a: &PairedEmbedding,
        b: &PairedEmbedding,
    ) -> Result<Partials> {
        let c = cosine_similarity(a, b)?;
        Ok(match self.mode {
            MetricMode::Euclidean => Partials {
                value: c,
                d_semantic: 1.0,
                d_beta: 0.0,
            },
            MetricMode::Introspective => {
                cosine_partials(c, beta_unchecked(a, b), &self.params, self.cosine_form)
            }
        })
    }

    pub fn distance(&self, a: &PairedEmbedding, b: &PairedEmbedding) -> Result<f64> {
        check_pair(a, b)?;
        Ok(self.distance_parts(a, b).value)
    }

    pub fn similarity(&self, a: &PairedEmbedding, b: &PairedEmbedding) -> Result<f64> {
        check_pair(a, b)?;
        Ok(self.similarity_parts(a, b)?.value)
    }

    pub fn distance_gradient(
        &self,
        a: &PairedEmbedding,
        b: &PairedEmbedding,
    ) -> Result<PairGradient> {
        check_pair(a, b)?;
        let parts = self.distance_parts(a, b);
        let mut g = PairGradient::zeros(parts.value, a.semantic.len(), a.uncertainty.len());
        let (ga, gb) = g.slots();
        scatter_pair(a, b, &parts, false, 1.0, ga, gb);
        Ok(g)
    }

    pub fn similarity_gradient(
        &self,
        a: &PairedEmbedding,
        b: &PairedEmbedding,
    ) -> Result<PairGradient> {
        check_pair(a, b)?;
        let parts = self.similarity_parts(a, b)?;
        let mut g = PairGradient::zeros(parts.value, a.semantic.len(), a.uncertainty.len());
        let (ga, gb) = g.slots();
        scatter_pair(a, b, &parts, true, 1.0, ga, gb);
        Ok(g)
    }
}
