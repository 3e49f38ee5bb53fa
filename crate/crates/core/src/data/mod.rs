//! Labeled datasets with ground-truth bookkeeping, label corruption and the
//! clean/noisy/other subset views.

mod idx;
mod snapshot;

use serde::{Deserialize, Serialize};

pub use idx::{encode_idx_images, encode_idx_labels, load_idx, parse_idx, write_idx};
pub use snapshot::{
    decode_dataset, decode_params, encode_dataset, encode_params, read_dataset, read_params,
    write_dataset, write_params, ParamSnapshot,
};

use crate::error::{Error, Result};
use crate::numcore::{Matrix, SeededRng};

/// Training or test data: observed labels, ground truth and the noise mask.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Matrix,
    labels: Vec<usize>,
    truth: Vec<usize>,
    noise_mask: Vec<bool>,
    num_classes: usize,
    noise_level: f64,
}

impl LabeledDataset {
    /// A dataset whose observed labels equal the ground truth.
    pub fn clean(features: Matrix, truth: Vec<usize>, num_classes: usize) -> Result<Self> {
        Self::new(features, truth.clone(), truth, num_classes, 0.0)
    }

    pub fn new(
        features: Matrix,
        labels: Vec<usize>,
        truth: Vec<usize>,
        num_classes: usize,
        noise_level: f64,
    ) -> Result<Self> {
        let n = features.rows();
        if labels.len() != n || truth.len() != n {
            return Err(Error::DimensionMismatch {
                context: "LabeledDataset labels",
                expected: n,
                got: labels.len().min(truth.len()),
            });
        }
        if num_classes == 0 {
            return Err(Error::invalid("num_classes must be positive"));
        }
        if let Some(bad) = labels.iter().chain(&truth).find(|&&c| c >= num_classes) {
            return Err(Error::invalid(format!(
                "class {bad} out of range for {num_classes} classes"
            )));
        }
        let noise_mask = labels.iter().zip(&truth).map(|(y, t)| y != t).collect();
        Ok(Self {
            features,
            labels,
            truth,
            noise_mask,
            num_classes,
            noise_level,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn truth(&self) -> &[usize] {
        &self.truth
    }

    pub fn noise_mask(&self) -> &[bool] {
        &self.noise_mask
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// The δ requested when the labels were corrupted (0 for clean data).
    pub fn noise_level(&self) -> f64 {
        self.noise_level
    }

    /// `|D_noise| / n`.
    pub fn realized_noise_level(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.noise_mask.iter().filter(|&&m| m).count() as f64 / self.len() as f64
    }

    pub fn has_noise(&self) -> bool {
        self.noise_mask.iter().any(|&m| m)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &t in &self.truth {
            counts[t] += 1;
        }
        counts
    }

    /// Keeps the listed rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> LabeledDataset {
        LabeledDataset {
            features: self.features.select_rows(rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            truth: rows.iter().map(|&r| self.truth[r]).collect(),
            noise_mask: rows.iter().map(|&r| self.noise_mask[r]).collect(),
            num_classes: self.num_classes,
            noise_level: self.noise_level,
        }
    }
}

/// Two isotropic Gaussian clusters in the plane; the first `n/2` points
/// belong to class 0 around `center_a`, the rest to class 1.
pub fn gen_two_clusters(
    n: usize,
    center_a: [f64; 2],
    center_b: [f64; 2],
    spread: f64,
    rng: &mut SeededRng,
) -> Result<LabeledDataset> {
    if n == 0 || n % 2 != 0 {
        return Err(Error::invalid(format!("cluster size n must be even and positive, got {n}")));
    }
    if !(spread > 0.0 && spread.is_finite()) {
        return Err(Error::invalid("spread must be a finite positive number"));
    }
    if center_a == center_b {
        return Err(Error::invalid("cluster centers must differ"));
    }
    let mut data = Vec::with_capacity(2 * n);
    let mut truth = Vec::with_capacity(n);
    for (class, center) in [center_a, center_b].iter().enumerate() {
        for _ in 0..n / 2 {
            data.push(center[0] + spread * rng.gaussian());
            data.push(center[1] + spread * rng.gaussian());
            truth.push(class);
        }
    }
    LabeledDataset::clean(Matrix::new(n, 2, data)?, truth, 2)
}

/// Keeps samples whose ground truth is in `keep` and relabels class
/// `keep[j]` as `j`.
pub fn filter_classes(ds: &LabeledDataset, keep: &[usize]) -> Result<LabeledDataset> {
    if keep.is_empty() {
        return Err(Error::invalid("class filter is empty"));
    }
    let counts = ds.class_counts();
    for (j, &c) in keep.iter().enumerate() {
        if c >= ds.num_classes || counts[c] == 0 {
            return Err(Error::invalid(format!("class {c} does not occur in the dataset")));
        }
        if keep[..j].contains(&c) {
            return Err(Error::invalid(format!("class {c} listed twice")));
        }
    }
    let remap = |c: usize| keep.iter().position(|&k| k == c);
    let rows: Vec<usize> = (0..ds.len()).filter(|&i| remap(ds.truth[i]).is_some()).collect();
    if rows.is_empty() {
        return Err(Error::EmptySubset("class filter kept no samples".into()));
    }
    let mut labels = Vec::with_capacity(rows.len());
    let mut truth = Vec::with_capacity(rows.len());
    for &r in &rows {
        truth.push(remap(ds.truth[r]).unwrap_or(0));
        // an observed label outside `keep` falls back to the ground truth
        labels.push(remap(ds.labels[r]).unwrap_or_else(|| remap(ds.truth[r]).unwrap_or(0)));
    }
    LabeledDataset::new(
        ds.features.select_rows(&rows),
        labels,
        truth,
        keep.len(),
        ds.noise_level,
    )
}

/// Exact-count label corruption.
///
/// Within each ground-truth class `⌊δ·|class|⌋` samples are chosen uniformly
/// without replacement and given a label drawn uniformly from the other
/// `C − 1` classes. Labels are rebuilt from the ground truth, so any earlier
/// corruption is discarded.
pub fn corrupt_labels(ds: &LabeledDataset, delta: f64, rng: &mut SeededRng) -> Result<LabeledDataset> {
    if !(0.0..0.5).contains(&delta) {
        return Err(Error::invalid(format!("noise level must lie in [0, 0.5), got {delta}")));
    }
    let c = ds.num_classes;
    if c < 2 {
        return Err(Error::invalid("label corruption needs at least two classes"));
    }
    let mut labels = ds.truth.clone();
    for class in 0..c {
        let members: Vec<usize> = (0..ds.len()).filter(|&i| ds.truth[i] == class).collect();
        // the epsilon keeps products like 0.29·100 from flooring one short
        let k = (delta * members.len() as f64 + 1e-9).floor() as usize;
        for pick in rng.sample_indices(members.len(), k) {
            let i = members[pick];
            let r = rng.below(c - 1);
            labels[i] = if r >= class { r + 1 } else { r };
        }
    }
    LabeledDataset::new(ds.features.clone(), labels, ds.truth.clone(), c, delta)
}

/// How class membership `D^(c)` is read when building noise views.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassConvention {
    /// `D^(c)` is ground-truth class `c`: noise(c) holds class-`c` inputs
    /// whose observed label was corrupted away from `c`.
    #[default]
    GroundTruth,
    /// `D^(c)` is observed label `c`: noise(c) holds inputs of other classes
    /// that were mislabeled as `c`.
    Observed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsetKind {
    Clean(usize),
    Noise(usize),
    Other(usize),
    Class(usize),
    CleanAll,
    NoiseAll,
    Full,
    TruthRelabeled,
}

/// Index list into a parent dataset, read with observed or ground-truth labels.
#[derive(Debug, Clone)]
pub struct SubsetView<'a> {
    parent: &'a LabeledDataset,
    indices: Vec<usize>,
    kind: SubsetKind,
    truth_labels: bool,
}

impl<'a> SubsetView<'a> {
    pub fn dataset(&self) -> &'a LabeledDataset {
        self.parent
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn kind(&self) -> SubsetKind {
        self.kind
    }

    pub fn uses_truth_labels(&self) -> bool {
        self.truth_labels
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Label of the `pos`-th member as this view reads it.
    pub fn label_at(&self, pos: usize) -> usize {
        self.label_of(self.indices[pos])
    }

    /// Label of dataset row `row` as this view reads it.
    pub fn label_of(&self, row: usize) -> usize {
        if self.truth_labels {
            self.parent.truth[row]
        } else {
            self.parent.labels[row]
        }
    }

    /// The same samples read with ground-truth labels.
    pub fn with_truth_labels(&self) -> SubsetView<'a> {
        SubsetView {
            truth_labels: true,
            ..self.clone()
        }
    }

    /// Concatenates another view of the same dataset (duplicates kept).
    pub fn concat(&self, other: &SubsetView<'a>) -> SubsetView<'a> {
        let mut indices = self.indices.clone();
        indices.extend_from_slice(&other.indices);
        SubsetView {
            indices,
            ..self.clone()
        }
    }

    /// View over an explicit row list, read with observed labels.
    pub fn from_rows(parent: &'a LabeledDataset, rows: Vec<usize>) -> Result<SubsetView<'a>> {
        if let Some(&bad) = rows.iter().find(|&&r| r >= parent.len()) {
            return Err(Error::invalid(format!("row {bad} out of range")));
        }
        Ok(SubsetView {
            parent,
            indices: rows,
            kind: SubsetKind::Full,
            truth_labels: false,
        })
    }
}

pub fn subset_view(
    ds: &LabeledDataset,
    kind: SubsetKind,
    convention: ClassConvention,
) -> Result<SubsetView<'_>> {
    let class_of = |c: usize| -> Result<usize> {
        if c < ds.num_classes {
            Ok(c)
        } else {
            Err(Error::invalid(format!("unknown class {c} ({} classes)", ds.num_classes)))
        }
    };
    let observed = convention == ClassConvention::Observed;
    let pick = |pred: &dyn Fn(usize) -> bool| (0..ds.len()).filter(|&i| pred(i)).collect::<Vec<_>>();
    let (indices, truth_labels) = match kind {
        SubsetKind::Clean(c) => {
            let c = class_of(c)?;
            (pick(&|i| ds.truth[i] == c && ds.labels[i] == c), false)
        }
        SubsetKind::Noise(c) => {
            let c = class_of(c)?;
            if observed {
                (pick(&|i| ds.labels[i] == c && ds.truth[i] != c), false)
            } else {
                (pick(&|i| ds.truth[i] == c && ds.labels[i] != c), false)
            }
        }
        SubsetKind::Other(c) => {
            let c = class_of(c)?;
            (pick(&|i| !ds.noise_mask[i] && ds.truth[i] != c), false)
        }
        SubsetKind::Class(c) => {
            let c = class_of(c)?;
            if observed {
                (pick(&|i| ds.labels[i] == c), false)
            } else {
                (pick(&|i| ds.truth[i] == c), false)
            }
        }
        SubsetKind::CleanAll => (pick(&|i| !ds.noise_mask[i]), false),
        SubsetKind::NoiseAll => (pick(&|i| ds.noise_mask[i]), false),
        SubsetKind::Full => ((0..ds.len()).collect(), false),
        SubsetKind::TruthRelabeled => ((0..ds.len()).collect(), true),
    };
    Ok(SubsetView {
        parent: ds,
        indices,
        kind,
        truth_labels,
    })
}

/// Every sample, read with its ground-truth label.
pub fn truth_relabeled(ds: &LabeledDataset) -> SubsetView<'_> {
    SubsetView {
        parent: ds,
        indices: (0..ds.len()).collect(),
        kind: SubsetKind::TruthRelabeled,
        truth_labels: true,
    }
}
