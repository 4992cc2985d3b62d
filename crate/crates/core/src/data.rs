//! Synthetic ambiguous-cluster datasets, CSV persistence and zero-shot
//! splits.
//!
//! CSV layout: a header `label,f0,...,f{D-1}`, then one row per sample. The
//! label is a class id or `a|b` for a two-class sample.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mixer::{mix_pair, ClassId, LabelSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    pub samples_per_class: usize,
    pub feature_dim: usize,
    /// Standard deviation of each class cluster.
    pub cluster_spread: f64,
    /// Standard deviation of the class centers around the origin.
    pub center_scale: f64,
    /// Fraction of training samples replaced by blends of two classes.
    pub ambiguity_fraction: f64,
    /// Isotropic noise added to every feature vector.
    pub noise_sigma: f64,
    /// Classes below `ceil(fraction * n_classes)` are training classes;
    /// blends only mix those.
    pub train_class_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_classes: 8,
            samples_per_class: 250,
            feature_dim: 32,
            cluster_spread: 1.0,
            center_scale: 1.0,
            ambiguity_fraction: 0.2,
            noise_sigma: 0.0,
            train_class_fraction: 0.5,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidParameter(m));
        if self.n_classes < 2 {
            return fail(format!("n_classes must be >= 2, got {}", self.n_classes));
        }
        if self.feature_dim < 2 {
            return fail(format!("feature_dim must be >= 2, got {}", self.feature_dim));
        }
        if self.samples_per_class == 0 {
            return fail("samples_per_class must be >= 1".into());
        }
        if !(self.cluster_spread > 0.0 && self.center_scale > 0.0) {
            return fail("cluster_spread and center_scale must be > 0".into());
        }
        if !(0.0..1.0).contains(&self.ambiguity_fraction) {
            return fail(format!(
                "ambiguity_fraction must lie in [0, 1), got {}",
                self.ambiguity_fraction
            ));
        }
        if !(self.noise_sigma >= 0.0) {
            return fail("noise_sigma must be >= 0".into());
        }
        train_class_count(self.n_classes, self.train_class_fraction)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<LabelSet>,
    /// `None` until the dataset is split.
    pub split: Option<Split>,
    pub provenance: serde_json::Value,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    /// Sorted distinct class ids over all label sets.
    pub fn classes(&self) -> Vec<ClassId> {
        self.labels
            .iter()
            .flat_map(LabelSet::ids)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn mixed_flags(&self) -> Vec<bool> {
        self.labels.iter().map(LabelSet::is_mixed).collect()
    }

    /// Class id of every sample; fails on two-class labels.
    pub fn single_labels(&self) -> Result<Vec<ClassId>> {
        self.labels
            .iter()
            .map(|l| match l {
                LabelSet::Single(c) => Ok(*c),
                LabelSet::Pair(..) => Err(Error::InvalidParameter(format!(
                    "expected single-class labels, found {l}"
                ))),
            })
            .collect()
    }

    fn subset(&self, idx: &[usize], split: Split) -> Dataset {
        Dataset {
            features: idx.iter().map(|&i| self.features[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            split: Some(split),
            provenance: self.provenance.clone(),
        }
    }
}

fn train_class_count(n_classes: usize, fraction: f64) -> Result<usize> {
    // guard against 0.3 * 10 = 3.0000000000000004
    let n_train = (fraction * n_classes as f64 - 1e-9).ceil().max(0.0) as usize;
    if n_train == 0 || n_train >= n_classes {
        return Err(Error::InvalidParameter(format!(
            "train class fraction {fraction} leaves one side of the split empty ({n_classes} classes)"
        )));
    }
    Ok(n_train)
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Gaussian clusters at random centers, with a fraction of training samples
/// replaced by cross-class blends carrying two-class labels.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let centers: Vec<Vec<f64>> = (0..spec.n_classes)
        .map(|_| {
            (0..spec.feature_dim)
                .map(|_| spec.center_scale * gaussian(&mut rng))
                .collect()
        })
        .collect();

    let mut features = Vec::with_capacity(spec.n_classes * spec.samples_per_class);
    let mut labels = Vec::with_capacity(features.capacity());
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..spec.samples_per_class {
            features.push(
                center
                    .iter()
                    .map(|m| m + spec.cluster_spread * gaussian(&mut rng))
                    .collect::<Vec<f64>>(),
            );
            labels.push(LabelSet::single(c as ClassId));
        }
    }

    let n_train_classes = train_class_count(spec.n_classes, spec.train_class_fraction)?;
    let train: Vec<usize> = (0..features.len())
        .filter(|&i| labels[i].ids().all(|c| (c as usize) < n_train_classes))
        .collect();
    let n_blend = (spec.ambiguity_fraction * train.len() as f64).round() as usize;
    if n_blend > 0 {
        let originals = features.clone();
        let mut targets = train.clone();
        targets.shuffle(&mut rng);
        for &t in targets.iter().take(n_blend) {
            let a = train[rng.random_range(0..train.len())];
            let b = loop {
                let b = train[rng.random_range(0..train.len())];
                if original_label(spec, b) != original_label(spec, a) {
                    break b;
                }
            };
            let lam = rng.random_range(0.3..0.7);
            features[t] = mix_pair(&originals[a], &originals[b], lam)?;
            labels[t] = original_label(spec, a).union(&original_label(spec, b))?;
        }
    }

    if spec.noise_sigma > 0.0 {
        for x in &mut features {
            for v in x.iter_mut() {
                *v += spec.noise_sigma * gaussian(&mut rng);
            }
        }
    }

    Ok(Dataset {
        features,
        labels,
        split: None,
        provenance: serde_json::json!({ "generator": "synthetic", "spec": spec }),
    })
}

// Labels may already have been overwritten by earlier blends; parents are
// identified by their original class, recovered from the sample index.
fn original_label(spec: &SyntheticSpec, i: usize) -> LabelSet {
    LabelSet::single((i / spec.samples_per_class) as ClassId)
}

/// Class-disjoint split: the first `ceil(fraction * n_classes)` classes in
/// ascending order train, the rest test.
pub fn split_zero_shot(dataset: &Dataset, train_class_fraction: f64) -> Result<(Dataset, Dataset)> {
    let classes = dataset.classes();
    if classes.len() < 2 {
        return Err(Error::InvalidParameter(
            "zero-shot split needs at least 2 classes".into(),
        ));
    }
    let n_train = train_class_count(classes.len(), train_class_fraction)?;
    let train_classes: BTreeSet<ClassId> = classes[..n_train].iter().copied().collect();
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (i, l) in dataset.labels.iter().enumerate() {
        let in_train = l.ids().filter(|c| train_classes.contains(c)).count();
        if in_train == l.len() {
            train.push(i);
        } else if in_train == 0 && !l.is_mixed() {
            test.push(i);
        } else {
            return Err(Error::InvalidParameter(format!(
                "sample {i} with label {l} cannot be placed in a class-disjoint split"
            )));
        }
    }
    Ok((
        dataset.subset(&train, Split::Train),
        dataset.subset(&test, Split::Test),
    ))
}

pub fn to_csv_string(dataset: &Dataset) -> String {
    let d = dataset.feature_dim();
    let mut out = String::from("label");
    for k in 0..d {
        write!(out, ",f{k}").expect("write to string");
    }
    out.push('\n');
    for (x, l) in dataset.features.iter().zip(&dataset.labels) {
        write!(out, "{l}").expect("write to string");
        for v in x {
            // shortest representation that parses back to the same bits
            write!(out, ",{v:?}").expect("write to string");
        }
        out.push('\n');
    }
    out
}

pub fn save_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    fs::write(path, to_csv_string(dataset))?;
    Ok(())
}

pub fn parse_csv(text: &str) -> Result<Dataset> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines
        .by_ref()
        .find(|(_, l)| !l.trim().is_empty())
        .ok_or(Error::Parse {
            line: 1,
            message: "empty file".into(),
        })?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.first() != Some(&"label") || cols.len() < 2 {
        return Err(Error::Parse {
            line: 1,
            message: "header must be label,f0,...,f{D-1}".into(),
        });
    }
    for (k, c) in cols[1..].iter().enumerate() {
        if *c != format!("f{k}") {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected column f{k}, found {c:?}"),
            });
        }
    }
    let d = cols.len() - 1;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (line, row) in lines {
        if row.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != d + 1 {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", d + 1, fields.len()),
            });
        }
        let label: LabelSet = fields[0]
            .trim()
            .parse()
            .map_err(|message| Error::Parse { line, message })?;
        let x = fields[1..]
            .iter()
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Parse {
                        line,
                        message: format!("non-numeric feature {f:?}"),
                    })
            })
            .collect::<Result<Vec<f64>>>()?;
        features.push(x);
        labels.push(label);
    }
    if features.is_empty() {
        return Err(Error::Parse {
            line: 2,
            message: "no data rows".into(),
        });
    }
    Ok(Dataset {
        features,
        labels,
        split: None,
        provenance: serde_json::json!({ "generator": "csv" }),
    })
}

pub fn load_csv(path: &Path) -> Result<Dataset> {
    let mut ds = parse_csv(&fs::read_to_string(path)?)?;
    ds.provenance = serde_json::json!({ "generator": "csv", "path": path.display().to_string() });
    Ok(ds)
}

/// Sidecar document describing a saved dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub provenance: serde_json::Value,
    pub n_samples: usize,
    pub feature_dim: usize,
    pub classes: Vec<ClassId>,
    pub n_mixed: usize,
    /// SHA-256 of the CSV file contents, hex encoded.
    pub csv_sha256: String,
}

/// Writes `<stem>.csv` and its `<stem>.meta.json` sidecar into `dir`.
pub fn save_with_metadata(dataset: &Dataset, dir: &Path, stem: &str) -> Result<DatasetMeta> {
    let csv = to_csv_string(dataset);
    fs::write(dir.join(format!("{stem}.csv")), &csv)?;
    let meta = DatasetMeta {
        provenance: dataset.provenance.clone(),
        n_samples: dataset.len(),
        feature_dim: dataset.feature_dim(),
        classes: dataset.classes(),
        n_mixed: dataset.labels.iter().filter(|l| l.is_mixed()).count(),
        csv_sha256: hex::encode(Sha256::digest(csv.as_bytes())),
    };
    fs::write(
        dir.join(format!("{stem}.meta.json")),
        serde_json::to_string_pretty(&meta)?,
    )?;
    Ok(meta)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            n_classes: 4,
            samples_per_class: 10,
            feature_dim: 3,
            ambiguity_fraction: 0.25,
            seed: 3,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn no_ambiguity_means_singletons() {
        let spec = SyntheticSpec {
            ambiguity_fraction: 0.0,
            ..small()
        };
        let ds = generate_synthetic(&spec).unwrap();
        assert!(ds.labels.iter().all(|l| !l.is_mixed()));
        assert_eq!(ds.len(), 40);
    }

    #[test]
    fn blends_stay_within_train_classes() {
        let ds = generate_synthetic(&small()).unwrap();
        let mixed: Vec<_> = ds.labels.iter().filter(|l| l.is_mixed()).collect();
        assert_eq!(mixed.len(), 5);
        assert!(mixed.iter().all(|l| l.ids().all(|c| c < 2)));
        let (train, test) = split_zero_shot(&ds, 0.5).unwrap();
        assert_eq!(train.len() + test.len(), ds.len());
        assert!(test.labels.iter().all(|l| !l.is_mixed()));
    }

    #[test]
    fn seeded_generation_is_deterministic() {
        let a = generate_synthetic(&small()).unwrap();
        let b = generate_synthetic(&small()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn split_by_sorted_class() {
        let ds = generate_synthetic(&SyntheticSpec {
            ambiguity_fraction: 0.0,
            ..small()
        })
        .unwrap();
        let (train, test) = split_zero_shot(&ds, 0.5).unwrap();
        assert_eq!(train.classes(), vec![0, 1]);
        assert_eq!(test.classes(), vec![2, 3]);
        assert!(split_zero_shot(&ds, 0.0).is_err());
        assert!(split_zero_shot(&ds, 1.0).is_err());
    }

    #[test]
    fn csv_label_rule_and_errors() {
        let ds = parse_csv("label,f0,f1\n3|7,0.1,0.2\n").unwrap();
        assert_eq!(ds.labels[0], LabelSet::pair(3, 7).unwrap());
        assert_eq!(ds.features[0], vec![0.1, 0.2]);

        let ragged = "label,f0,f1\n1,0,0\n1,0,0\n2,1,1\n2,1\n";
        match parse_csv(ragged) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("unexpected {other:?}"),
        }
        match parse_csv("label,f0\n1,abc\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_csv(""), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_csv("label,f0\n"), Err(Error::Parse { .. })));
    }

    #[test]
    fn csv_round_trip() {
        let ds = generate_synthetic(&small()).unwrap();
        let back = parse_csv(&to_csv_string(&ds)).unwrap();
        assert_eq!(back.features, ds.features);
        assert_eq!(back.labels, ds.labels);
    }
}
