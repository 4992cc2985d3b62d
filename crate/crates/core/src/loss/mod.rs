//! Metric-learning losses built on a [`PairMetric`].
//!
//! Every loss is split into two phases. [`mine`] picks the pairs or
//! triplets a loss trains on (a no-op for proxy losses and the contrastive
//! loss); [`evaluate`] computes the value and exact gradients for a fixed
//! selection. Holding the selection fixed is what makes the gradients
//! checkable by finite differences.
//!
//! With a Euclidean metric, or with zero uncertainty and `gamma = 0`, each
//! loss is the classical formulation it is named after.

mod pairwise;
mod proxy;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::metric::{GradSlot, PairMetric, PairedEmbedding};
use crate::mixer::{ClassId, LabelSet};
use crate::sampler::MiningConfig;

pub use pairwise::{
    contrastive_loss, margin_dw_loss, mine_margin_pairs, mine_multi_similarity, mine_triplets,
    multi_similarity_loss, triplet_semihard_loss,
};
pub use proxy::{proxy_anchor_loss, proxy_nca_loss, softmax_ism_loss};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    #[default]
    MarginDw,
    TripletSemihard,
    Contrastive,
    MultiSimilarity,
    ProxyNca,
    ProxyAnchor,
    SoftmaxIsm,
}

impl LossVariant {
    pub const ALL: [LossVariant; 7] = [
        LossVariant::MarginDw,
        LossVariant::TripletSemihard,
        LossVariant::Contrastive,
        LossVariant::MultiSimilarity,
        LossVariant::ProxyNca,
        LossVariant::ProxyAnchor,
        LossVariant::SoftmaxIsm,
    ];

    pub fn uses_proxies(self) -> bool {
        matches!(
            self,
            LossVariant::ProxyNca | LossVariant::ProxyAnchor | LossVariant::SoftmaxIsm
        )
    }

    /// Whether the loss compares samples by cosine similarity.
    pub fn uses_cosine(self) -> bool {
        matches!(
            self,
            LossVariant::MultiSimilarity | LossVariant::ProxyAnchor | LossVariant::SoftmaxIsm
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            LossVariant::MarginDw => "margin_dw",
            LossVariant::TripletSemihard => "triplet_semihard",
            LossVariant::Contrastive => "contrastive",
            LossVariant::MultiSimilarity => "multi_similarity",
            LossVariant::ProxyNca => "proxy_nca",
            LossVariant::ProxyAnchor => "proxy_anchor",
            LossVariant::SoftmaxIsm => "softmax_ism",
        }
    }
}

/// Loss hyperparameters. The multi-similarity and ProxyAnchor scales are
/// unrelated to the metric's `alpha`/`beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub variant: LossVariant,
    /// Positive-pair margin of the margin loss.
    pub xi: f64,
    /// Negative-pair margin of the margin loss.
    pub omega: f64,
    pub triplet_delta: f64,
    pub contrastive_delta: f64,
    pub ms_alpha: f64,
    pub ms_beta: f64,
    pub ms_lambda: f64,
    pub ms_epsilon: f64,
    pub pa_alpha: f64,
    pub pa_delta: f64,
    /// Evaluate the literal printed forms: a subtracted negative hinge in the
    /// margin loss, `exp(+D)` in ProxyNCA, negatives-only softmax denominator.
    pub fidelity_mode: bool,
    /// Per-sample bound on NCA/softmax log terms.
    pub log_cap: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            variant: LossVariant::MarginDw,
            xi: 0.2,
            omega: 1.2,
            triplet_delta: 0.2,
            contrastive_delta: 1.0,
            ms_alpha: 2.0,
            ms_beta: 50.0,
            ms_lambda: 1.0,
            ms_epsilon: 0.1,
            pa_alpha: 32.0,
            pa_delta: 0.1,
            fidelity_mode: false,
            log_cap: 50.0,
        }
    }
}

impl LossConfig {
    pub fn for_variant(variant: LossVariant) -> Self {
        Self {
            variant,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("ms_alpha", self.ms_alpha),
            ("ms_beta", self.ms_beta),
            ("pa_alpha", self.pa_alpha),
            ("log_cap", self.log_cap),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.xi >= 0.0 && self.xi < self.omega) {
            return Err(Error::InvalidParameter(format!(
                "margins need 0 <= xi < omega, got xi={} omega={}",
                self.xi, self.omega
            )));
        }
        Ok(())
    }
}

/// Learnable class representatives, each a full paired embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyBank {
    pub proxies: Vec<PairedEmbedding>,
    pub labels: Vec<ClassId>,
}

impl ProxyBank {
    pub fn new(proxies: Vec<PairedEmbedding>, labels: Vec<ClassId>) -> Result<Self> {
        check_dim("proxy labels", proxies.len(), labels.len())?;
        if let Some(first) = proxies.first() {
            for p in &proxies {
                p.validate()?;
                check_dim("proxy semantic", first.semantic.len(), p.semantic.len())?;
                check_dim("proxy uncertainty", first.uncertainty.len(), p.uncertainty.len())?;
            }
        }
        Ok(Self { proxies, labels })
    }

    pub fn len(&self) -> usize {
        self.proxies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.proxies.is_empty()
    }

    /// Fails with [`Error::MissingProxy`] if any class in `labels` has no proxy.
    pub fn check_covers(&self, labels: &[LabelSet]) -> Result<()> {
        for l in labels {
            for c in l.ids() {
                if !self.labels.contains(&c) {
                    return Err(Error::MissingProxy(c));
                }
            }
        }
        Ok(())
    }
}

/// Gradients with respect to a list of embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingGrads {
    pub semantic: Vec<Vec<f64>>,
    pub uncertainty: Vec<Vec<f64>>,
}

impl EmbeddingGrads {
    pub fn zeros_like(embeddings: &[PairedEmbedding]) -> Self {
        Self {
            semantic: embeddings.iter().map(|e| vec![0.0; e.semantic.len()]).collect(),
            uncertainty: embeddings
                .iter()
                .map(|e| vec![0.0; e.uncertainty.len()])
                .collect(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.semantic
            .iter()
            .chain(&self.uncertainty)
            .flatten()
            .all(|v| *v == 0.0)
    }

    pub(crate) fn slot(&mut self, i: usize) -> GradSlot<'_> {
        GradSlot {
            semantic: &mut self.semantic[i],
            uncertainty: &mut self.uncertainty[i],
        }
    }

    pub(crate) fn two(&mut self, i: usize, j: usize) -> (GradSlot<'_>, GradSlot<'_>) {
        assert_ne!(i, j, "pair gradient needs two distinct samples");
        let (s_i, s_j) = two_mut(&mut self.semantic, i, j);
        let (u_i, u_j) = two_mut(&mut self.uncertainty, i, j);
        (
            GradSlot {
                semantic: s_i,
                uncertainty: u_i,
            },
            GradSlot {
                semantic: s_j,
                uncertainty: u_j,
            },
        )
    }
}

fn two_mut<T>(v: &mut [T], i: usize, j: usize) -> (&mut T, &mut T) {
    if i < j {
        let (lo, hi) = v.split_at_mut(j);
        (&mut lo[i], &mut hi[0])
    } else {
        let (lo, hi) = v.split_at_mut(i);
        (&mut hi[0], &mut lo[j])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossWarning {
    /// No negative pair exists in the batch.
    SingleClassBatch,
    /// No anchor-positive pair had a negative to form a triplet.
    NoValidTriplets,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    pub grads: EmbeddingGrads,
    /// Present for proxy-based losses.
    pub proxy_grads: Option<EmbeddingGrads>,
    pub warnings: Vec<LossWarning>,
    /// Number of per-sample log terms clamped to `log_cap`.
    pub clamp_events: usize,
    /// Smallest distance of any hinge or clamp argument to its kink; the
    /// loss is smooth within this margin of the evaluated point.
    pub kink_margin: f64,
}

impl LossOutput {
    fn new(batch: &[PairedEmbedding], proxies: Option<&ProxyBank>) -> Self {
        Self {
            value: 0.0,
            grads: EmbeddingGrads::zeros_like(batch),
            proxy_grads: proxies.map(|p| EmbeddingGrads::zeros_like(&p.proxies)),
            warnings: Vec::new(),
            clamp_events: 0,
            kink_margin: f64::INFINITY,
        }
    }

    fn touch_kink(&mut self, arg: f64) {
        self.kink_margin = self.kink_margin.min(arg.abs());
    }
}

/// Pairs or triplets chosen for one loss evaluation.
#[derive(Debug, Clone, PartialEq)]
pub enum Mining {
    /// Nothing to mine: all pairs or all proxies take part.
    All,
    /// Anchor-positive pairs and one sampled negative pair per positive.
    MarginPairs {
        positives: Vec<(usize, usize)>,
        negatives: Vec<(usize, usize)>,
    },
    /// `(anchor, positive, negative)` triplets.
    Triplets(Vec<(usize, usize, usize)>),
    /// Pairs kept by multi-similarity filtering, per anchor.
    MultiSimilarity {
        positives: Vec<Vec<usize>>,
        negatives: Vec<Vec<usize>>,
    },
}

fn check_batch(batch: &[PairedEmbedding], labels: &[LabelSet]) -> Result<()> {
    check_dim("batch labels", batch.len(), labels.len())?;
    if let Some(first) = batch.first() {
        for e in batch {
            check_dim("batch semantic", first.semantic.len(), e.semantic.len())?;
            check_dim("batch uncertainty", first.uncertainty.len(), e.uncertainty.len())?;
        }
    }
    Ok(())
}

/// Chooses the pairs or triplets for `cfg.variant`.
pub fn mine(
    cfg: &LossConfig,
    batch: &[PairedEmbedding],
    labels: &[LabelSet],
    metric: &PairMetric,
    mining: &MiningConfig,
) -> Result<Mining> {
    check_batch(batch, labels)?;
    match cfg.variant {
        LossVariant::MarginDw => mine_margin_pairs(batch, labels, metric, mining),
        LossVariant::TripletSemihard => Ok(mine_triplets(batch, labels, metric)),
        LossVariant::MultiSimilarity => mine_multi_similarity(batch, labels, metric, cfg),
        LossVariant::Contrastive
        | LossVariant::ProxyNca
        | LossVariant::ProxyAnchor
        | LossVariant::SoftmaxIsm => Ok(Mining::All),
    }
}

/// Value and gradients of `cfg.variant` for a fixed selection.
pub fn evaluate(
    cfg: &LossConfig,
    batch: &[PairedEmbedding],
    labels: &[LabelSet],
    proxies: Option<&ProxyBank>,
    metric: &PairMetric,
    mined: &Mining,
) -> Result<LossOutput> {
    cfg.validate()?;
    check_batch(batch, labels)?;
    let need_proxies = || {
        proxies.ok_or_else(|| {
            Error::InvalidParameter(format!("{} needs a proxy bank", cfg.variant.name()))
        })
    };
    match (cfg.variant, mined) {
        (LossVariant::MarginDw, Mining::MarginPairs { positives, negatives }) => Ok(
            pairwise::margin_from_pairs(batch, metric, cfg, positives, negatives),
        ),
        (LossVariant::TripletSemihard, Mining::Triplets(t)) => {
            Ok(pairwise::triplet_from_mining(batch, metric, cfg, t))
        }
        (LossVariant::Contrastive, Mining::All) => Ok(pairwise::contrastive_all_pairs(
            batch, labels, metric, cfg,
        )),
        (LossVariant::MultiSimilarity, Mining::MultiSimilarity { positives, negatives }) => {
            pairwise::multi_similarity_from_mining(batch, metric, cfg, positives, negatives)
        }
        (LossVariant::ProxyNca, Mining::All) => {
            proxy::proxy_nca(batch, labels, need_proxies()?, metric, cfg)
        }
        (LossVariant::ProxyAnchor, Mining::All) => {
            proxy::proxy_anchor(batch, labels, need_proxies()?, metric, cfg)
        }
        (LossVariant::SoftmaxIsm, Mining::All) => {
            proxy::softmax_ism(batch, labels, need_proxies()?, metric, cfg)
        }
        (variant, _) => Err(Error::InvalidParameter(format!(
            "mining result does not match loss {}",
            variant.name()
        ))),
    }
}

/// [`mine`] followed by [`evaluate`].
pub fn compute(
    cfg: &LossConfig,
    batch: &[PairedEmbedding],
    labels: &[LabelSet],
    proxies: Option<&ProxyBank>,
    metric: &PairMetric,
    mining: &MiningConfig,
) -> Result<(LossOutput, Mining)> {
    let mined = mine(cfg, batch, labels, metric, mining)?;
    let out = evaluate(cfg, batch, labels, proxies, metric, &mined)?;
    Ok((out, mined))
}

/// `log(sum(exp(x)))`; `-inf` for an empty slice.
pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let top = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return top;
    }
    top + xs.iter().map(|x| (x - top).exp()).sum::<f64>().ln()
}

/// `log(1 + sum(exp(x)))`.
pub(crate) fn log1p_sum_exp(xs: &[f64]) -> f64 {
    let top = xs.iter().cloned().fold(0.0, f64::max);
    top + ((-top).exp() + xs.iter().map(|x| (x - top).exp()).sum::<f64>()).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_sum_exp_is_stable() {
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log1p_sum_exp(&[]), 0.0);
        assert!((log1p_sum_exp(&[0.0]) - 2f64.ln()).abs() < 1e-15);
        assert!((log1p_sum_exp(&[800.0]) - 800.0).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(LossConfig::default().validate().is_ok());
        let bad = LossConfig {
            xi: 2.0,
            ..LossConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = LossConfig {
            ms_beta: 0.0,
            ..LossConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn proxy_coverage() {
        let bank = ProxyBank::new(
            vec![PairedEmbedding::certain(vec![1.0, 0.0], 1).unwrap()],
            vec![3],
        )
        .unwrap();
        assert!(bank.check_covers(&[LabelSet::single(3)]).is_ok());
        assert!(matches!(
            bank.check_covers(&[LabelSet::pair(3, 4).unwrap()]),
            Err(Error::MissingProxy(4))
        ));
    }

    #[test]
    fn mining_must_match_variant() {
        let batch = vec![PairedEmbedding::certain(vec![1.0], 1).unwrap(); 2];
        let labels = vec![LabelSet::single(0), LabelSet::single(1)];
        let cfg = LossConfig::for_variant(LossVariant::MarginDw);
        let r = evaluate(&cfg, &batch, &labels, None, &PairMetric::euclidean(), &Mining::All);
        assert!(r.is_err());
    }
}
