//! Feature-level mixup with set-valued labels.
//!
//! A mixed sample carries the label set `{l1, l2}` of its parents. Two label
//! sets count as the same class when they intersect, so a mixed sample is a
//! positive for both parent classes. That relation is reflexive and
//! symmetric but not transitive: `{1,2} ~ {2,3}` and `{2,3} ~ {3,4}` while
//! `{1,2}` and `{3,4}` are disjoint.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

pub type ClassId = u32;

/// One class, or the two classes of a mixed sample. Pairs are stored sorted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LabelSet {
    Single(ClassId),
    Pair(ClassId, ClassId),
}

impl LabelSet {
    pub fn single(c: ClassId) -> Self {
        LabelSet::Single(c)
    }

    pub fn pair(a: ClassId, b: ClassId) -> Result<Self> {
        match a.cmp(&b) {
            std::cmp::Ordering::Less => Ok(LabelSet::Pair(a, b)),
            std::cmp::Ordering::Greater => Ok(LabelSet::Pair(b, a)),
            std::cmp::Ordering::Equal => Err(Error::InvalidParameter(format!(
                "label set {{{a},{b}}} has a duplicate id"
            ))),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            LabelSet::Single(_) => 1,
            LabelSet::Pair(..) => 2,
        }
    }

    pub fn is_mixed(&self) -> bool {
        matches!(self, LabelSet::Pair(..))
    }

    pub fn ids(&self) -> impl Iterator<Item = ClassId> {
        let (a, b) = match *self {
            LabelSet::Single(a) => (a, None),
            LabelSet::Pair(a, b) => (a, Some(b)),
        };
        std::iter::once(a).chain(b)
    }

    pub fn contains(&self, c: ClassId) -> bool {
        match *self {
            LabelSet::Single(a) => a == c,
            LabelSet::Pair(a, b) => a == c || b == c,
        }
    }

    /// Union of two label sets; fails if it would hold more than two ids.
    pub fn union(&self, other: &LabelSet) -> Result<LabelSet> {
        let mut ids: Vec<ClassId> = self.ids().chain(other.ids()).collect();
        ids.sort_unstable();
        ids.dedup();
        match ids[..] {
            [a] => Ok(LabelSet::Single(a)),
            [a, b] => Ok(LabelSet::Pair(a, b)),
            _ => Err(Error::InvalidParameter(format!(
                "union of {self} and {other} has more than two classes"
            ))),
        }
    }
}

impl fmt::Display for LabelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LabelSet::Single(a) => write!(f, "{a}"),
            LabelSet::Pair(a, b) => write!(f, "{a}|{b}"),
        }
    }
}

impl FromStr for LabelSet {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let parse = |t: &str| {
            t.trim()
                .parse::<ClassId>()
                .map_err(|_| format!("invalid class id {t:?}"))
        };
        match s.split_once('|') {
            None => Ok(LabelSet::Single(parse(s)?)),
            Some((a, b)) => LabelSet::pair(parse(a)?, parse(b)?).map_err(|e| e.to_string()),
        }
    }
}

/// Two labels are equal when their sets intersect.
pub fn label_equal(a: &LabelSet, b: &LabelSet) -> bool {
    a.ids().any(|c| b.contains(c))
}

/// `lam * x1 + (1 - lam) * x2`.
pub fn mix_pair(x1: &[f64], x2: &[f64], lam: f64) -> Result<Vec<f64>> {
    check_dim("mix_pair", x1.len(), x2.len())?;
    if !(0.0..=1.0).contains(&lam) {
        return Err(Error::InvalidParameter(format!(
            "mixing coefficient must lie in [0, 1], got {lam}"
        )));
    }
    Ok(x1
        .iter()
        .zip(x2)
        .map(|(a, b)| lam * a + (1.0 - lam) * b)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixConfig {
    /// Fraction of the available cross-class pairs that get mixed.
    pub mix_prob: f64,
    /// Symmetric Beta parameter for the mixing coefficient.
    pub beta_a: f64,
    pub rng_seed: u64,
}

impl Default for MixConfig {
    fn default() -> Self {
        Self {
            mix_prob: 0.0,
            beta_a: 1.0,
            rng_seed: 0,
        }
    }
}

impl MixConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mix_prob) {
            return Err(Error::InvalidParameter(format!(
                "mix_prob must lie in [0, 1], got {}",
                self.mix_prob
            )));
        }
        if !(self.beta_a > 0.0 && self.beta_a.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "beta_a must be > 0, got {}",
                self.beta_a
            )));
        }
        Ok(())
    }
}

/// A batch after mixing: the originals followed by the mixed samples.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedBatch {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<LabelSet>,
    pub mixed: Vec<bool>,
    /// Parent indices and coefficient for each appended sample.
    pub parents: Vec<(usize, usize, f64)>,
    /// Set when no cross-class pair could be formed.
    pub skipped: bool,
}

/// Appends mixed samples built from cross-class pairs of singleton-labelled
/// originals. Pairs come from a seeded shuffle; each is matched with the next
/// unpaired sample of a different class.
pub fn mix_batch(features: &[Vec<f64>], labels: &[LabelSet], cfg: &MixConfig) -> Result<MixedBatch> {
    cfg.validate()?;
    check_dim("mix_batch labels", features.len(), labels.len())?;
    if features.len() < 2 {
        return Err(Error::InvalidParameter(
            "mix_batch needs at least 2 samples".into(),
        ));
    }
    let mut out = MixedBatch {
        features: features.to_vec(),
        labels: labels.to_vec(),
        mixed: labels.iter().map(LabelSet::is_mixed).collect(),
        parents: Vec::new(),
        skipped: false,
    };
    if cfg.mix_prob == 0.0 {
        return Ok(out);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut order: Vec<usize> = (0..features.len())
        .filter(|&i| !labels[i].is_mixed())
        .collect();
    order.shuffle(&mut rng);

    let mut used = vec![false; order.len()];
    let mut pairs = Vec::new();
    for i in 0..order.len() {
        if used[i] {
            continue;
        }
        if let Some(j) =
            (i + 1..order.len()).find(|&j| !used[j] && !label_equal(&labels[order[i]], &labels[order[j]]))
        {
            used[i] = true;
            used[j] = true;
            pairs.push((order[i], order[j]));
        }
    }
    if pairs.is_empty() {
        out.skipped = true;
        return Ok(out);
    }

    let n_mix = ((cfg.mix_prob * (features.len() / 2) as f64).round() as usize).min(pairs.len());
    let beta = Beta::new(cfg.beta_a, cfg.beta_a)
        .map_err(|e| Error::InvalidParameter(format!("beta distribution: {e}")))?;
    for &(a, b) in pairs.iter().take(n_mix) {
        let lam: f64 = beta.sample(&mut rng);
        out.features.push(mix_pair(&features[a], &features[b], lam)?);
        out.labels.push(labels[a].union(&labels[b])?);
        out.mixed.push(true);
        out.parents.push((a, b, lam));
    }
    Ok(out)
}
