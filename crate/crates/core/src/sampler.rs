//! Negative mining: semi-hard selection and distance-weighted sampling.
//!
//! Both strategies rank negatives by the pair metric the loss trains with,
//! so uncertain pairs look closer than their semantic distance.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::metric::{PairMetric, PairedEmbedding};
use crate::mixer::{label_equal, LabelSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MiningConfig {
    /// Clip constant of the inverse density weight.
    pub phi: f64,
    /// Dimension `n` in the hypersphere distance density.
    pub n_dim: usize,
    pub rng_seed: u64,
    /// Distances are clamped to `[d_min, 2 - d_min]` before weighting.
    pub d_min: f64,
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self {
            phi: 10.0,
            n_dim: 32,
            rng_seed: 0,
            d_min: 0.05,
        }
    }
}

impl MiningConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.phi > 0.0 && self.phi.is_finite()) {
            return Err(Error::InvalidParameter(format!("phi must be > 0, got {}", self.phi)));
        }
        if self.n_dim < 3 {
            return Err(Error::InvalidParameter(format!(
                "n_dim must be >= 3, got {}",
                self.n_dim
            )));
        }
        if !(self.d_min > 0.0 && self.d_min < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "d_min must lie in (0, 1), got {}",
                self.d_min
            )));
        }
        Ok(())
    }
}

fn check_density_domain(d: f64) -> Result<()> {
    if d > 0.0 && d < 2.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "distance-weighted density needs 0 < d < 2, got {d}"
        )))
    }
}

/// `min(phi, d^(2-n) (1 - d^2/4)^((3-n)/2))`, evaluated directly.
pub fn dw_density(d: f64, cfg: &MiningConfig) -> Result<f64> {
    check_density_domain(d)?;
    let n = cfg.n_dim as f64;
    let raw = d.powf(2.0 - n) * (1.0 - 0.25 * d * d).powf((3.0 - n) / 2.0);
    Ok(cfg.phi.min(raw))
}

/// Logarithm of [`dw_density`], stable for large `n`.
pub fn dw_log_density(d: f64, cfg: &MiningConfig) -> Result<f64> {
    check_density_domain(d)?;
    let n = cfg.n_dim as f64;
    let raw = (2.0 - n) * d.ln() + 0.5 * (3.0 - n) * (1.0 - 0.25 * d * d).ln();
    Ok(cfg.phi.ln().min(raw))
}

/// Random stream dedicated to one anchor, so draws do not depend on the
/// order anchors are processed in.
pub fn anchor_rng(seed: u64, anchor: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(anchor as u64);
    rng
}

fn negatives(anchor: usize, labels: &[LabelSet]) -> impl Iterator<Item = usize> + '_ {
    let la = labels[anchor];
    (0..labels.len()).filter(move |&n| n != anchor && !label_equal(&la, &labels[n]))
}

/// Semi-hard negative from a precomputed row of anchor distances.
///
/// Returns the closest negative still farther than the positive, or the
/// farthest negative when none is. Ties go to the lowest index.
pub fn semi_hard_from_row(
    row: &[f64],
    anchor: usize,
    positive: usize,
    labels: &[LabelSet],
) -> Option<usize> {
    let d_ap = row[positive];
    let mut closest_beyond: Option<usize> = None;
    let mut farthest: Option<usize> = None;
    for n in negatives(anchor, labels) {
        let d = row[n];
        if d > d_ap && closest_beyond.is_none_or(|c| d < row[c]) {
            closest_beyond = Some(n);
        }
        if farthest.is_none_or(|f| d > row[f]) {
            farthest = Some(n);
        }
    }
    closest_beyond.or(farthest)
}

fn anchor_row(anchor: usize, batch: &[PairedEmbedding], metric: &PairMetric) -> Result<Vec<f64>> {
    batch.iter().map(|e| metric.distance(&batch[anchor], e)).collect()
}

pub fn semi_hard_negative(
    anchor: usize,
    positive: usize,
    batch: &[PairedEmbedding],
    labels: &[LabelSet],
    metric: &PairMetric,
) -> Result<Option<usize>> {
    check_dim("batch labels", batch.len(), labels.len())?;
    let row = anchor_row(anchor, batch, metric)?;
    Ok(semi_hard_from_row(&row, anchor, positive, labels))
}

/// Categorical distribution over the negatives of one anchor with weights
/// proportional to the clipped inverse distance density.
#[derive(Debug, Clone)]
pub struct NegativeDistribution {
    candidates: Vec<usize>,
    weights: Vec<f64>,
    index: WeightedIndex<f64>,
}

impl NegativeDistribution {
    pub fn from_row(
        row: &[f64],
        anchor: usize,
        labels: &[LabelSet],
        cfg: &MiningConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let candidates: Vec<usize> = negatives(anchor, labels).collect();
        if candidates.is_empty() {
            return Err(Error::NoNegatives(anchor));
        }
        let logs = candidates
            .iter()
            .map(|&n| dw_log_density(row[n].clamp(cfg.d_min, 2.0 - cfg.d_min), cfg))
            .collect::<Result<Vec<_>>>()?;
        let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
        let index = WeightedIndex::new(&weights)
            .map_err(|e| Error::InvalidParameter(format!("negative weights: {e}")))?;
        Ok(Self {
            candidates,
            weights,
            index,
        })
    }

    pub fn candidates(&self) -> &[usize] {
        &self.candidates
    }

    /// Weights normalized to sum to one, aligned with [`Self::candidates`].
    pub fn probabilities(&self) -> Vec<f64> {
        let total: f64 = self.weights.iter().sum();
        self.weights.iter().map(|w| w / total).collect()
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.candidates[self.index.sample(rng)]
    }
}

/// Draws one negative for `anchor`, seeded from `cfg.rng_seed` and the anchor
/// index.
pub fn distance_weighted_negative(
    anchor: usize,
    batch: &[PairedEmbedding],
    labels: &[LabelSet],
    metric: &PairMetric,
    cfg: &MiningConfig,
) -> Result<usize> {
    check_dim("batch labels", batch.len(), labels.len())?;
    let row = anchor_row(anchor, batch, metric)?;
    let dist = NegativeDistribution::from_row(&row, anchor, labels, cfg)?;
    Ok(dist.sample(&mut anchor_rng(cfg.rng_seed, anchor)))
}
