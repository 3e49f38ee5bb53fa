//! One-degree angle histograms of model derivatives and sample-wise gradients.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{check_mode, fill_cotangent, logit_for, subset_sum, GradientMode, LabelSource};
use crate::data::{subset_view, ClassConvention, LabeledDataset, SubsetKind};
use crate::error::{Error, Result};
use crate::network::NetworkState;
use crate::numcore::{cosine, norm, SeededRng};

/// Bins `[k°, k+1°)` for `k = 0..180`; exactly 180° lands in the last bin.
pub const NUM_BINS: usize = 181;

const PAIR_CHUNK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistogramKind {
    /// `θ_h` between two samples of the class.
    Within,
    /// `θ_h` between a sample of the class and one of another class.
    Between,
    /// `θ_g` between each clean sample gradient and `g_clean`.
    CleanVsRef,
    NoiseVsRef,
    OtherVsRef,
}

impl HistogramKind {
    pub const ALL: [HistogramKind; 5] = [
        HistogramKind::Within,
        HistogramKind::Between,
        HistogramKind::CleanVsRef,
        HistogramKind::NoiseVsRef,
        HistogramKind::OtherVsRef,
    ];

    pub fn name(self) -> &'static str {
        match self {
            HistogramKind::Within => "within",
            HistogramKind::Between => "between",
            HistogramKind::CleanVsRef => "clean_vs_ref",
            HistogramKind::NoiseVsRef => "noise_vs_ref",
            HistogramKind::OtherVsRef => "other_vs_ref",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleHistogram {
    pub kind: HistogramKind,
    pub class: usize,
    pub counts: Vec<u64>,
    pub reference: String,
    /// Subset-gradient directions against the reference, in degrees.
    pub markers: Vec<(String, f64)>,
    /// Pairs or samples skipped because a vector vanished.
    pub skipped: usize,
}

impl AngleHistogram {
    pub(crate) fn new(kind: HistogramKind, class: usize, reference: String) -> Self {
        Self {
            kind,
            class,
            counts: vec![0; NUM_BINS],
            reference,
            markers: Vec::new(),
            skipped: 0,
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub(crate) fn record(&mut self, radians: f64) {
        let deg = radians.to_degrees();
        let bin = (deg.max(0.0).floor() as usize).min(NUM_BINS - 1);
        self.counts[bin] += 1;
    }

    /// Median bin lower edge, in degrees.
    pub fn median_deg(&self) -> Option<f64> {
        let total = self.total();
        if total == 0 {
            return None;
        }
        let mut seen = 0;
        for (k, &c) in self.counts.iter().enumerate() {
            seen += c;
            if 2 * seen >= total {
                return Some(k as f64);
            }
        }
        None
    }

    /// Count-weighted mean of bin centers, in degrees.
    pub fn mean_deg(&self) -> Option<f64> {
        let total = self.total();
        (total > 0).then(|| {
            self.counts
                .iter()
                .enumerate()
                .map(|(k, &c)| (k as f64 + 0.5).min(180.0) * c as f64)
                .sum::<f64>()
                / total as f64
        })
    }
}

fn sample_pairs(
    left: &[usize],
    right: Option<&[usize]>,
    budget: usize,
    rng: &mut SeededRng,
) -> Vec<(usize, usize)> {
    match right {
        None => {
            let k = left.len();
            let total = k * k.saturating_sub(1) / 2;
            if total <= budget {
                (0..k).flat_map(|i| (i + 1..k).map(move |j| (left[i], left[j]))).collect()
            } else {
                (0..budget)
                    .map(|_| {
                        let i = rng.below(k);
                        let mut j = rng.below(k - 1);
                        if j >= i {
                            j += 1;
                        }
                        (left[i], left[j])
                    })
                    .collect()
            }
        }
        Some(right) => {
            if left.len() * right.len() <= budget {
                left.iter().flat_map(|&i| right.iter().map(move |&j| (i, j))).collect()
            } else {
                (0..budget)
                    .map(|_| (left[rng.below(left.len())], right[rng.below(right.len())]))
                    .collect()
            }
        }
    }
}

/// Builds one histogram for class `class`.
///
/// Within/between kinds sample up to `pair_budget` unordered pairs (all of
/// them when fewer exist) and measure `θ_h` on the class's logit. The
/// `*_vs_ref` kinds measure every sample of the subset against
/// `g_clean(class)`; they need a sigmoid head or single-logit mode.
#[allow(clippy::too_many_arguments)]
pub fn angle_histogram(
    state: &NetworkState,
    ds: &LabeledDataset,
    class: usize,
    kind: HistogramKind,
    mode: GradientMode,
    convention: ClassConvention,
    pair_budget: usize,
    rng: &mut SeededRng,
) -> Result<AngleHistogram> {
    if pair_budget == 0 {
        return Err(Error::invalid("pair_budget must be positive"));
    }
    check_mode(state, mode)?;
    let logit = logit_for(state, mode, class);
    match kind {
        HistogramKind::Within | HistogramKind::Between => {
            let members = subset_view(ds, SubsetKind::Class(class), convention)?;
            let rest: Vec<usize>;
            let right = if kind == HistogramKind::Between {
                let inside = members.indices();
                rest = (0..ds.len()).filter(|i| inside.binary_search(i).is_err()).collect();
                Some(rest.as_slice())
            } else {
                None
            };
            if members.is_empty() || right.is_some_and(|r| r.is_empty()) {
                return Err(Error::EmptySubset(format!("{} pairs for class {class}", kind.name())));
            }
            let pairs = sample_pairs(members.indices(), right, pair_budget, rng);
            let mut hist = AngleHistogram::new(kind, class, format!("model derivative, logit {logit}"));
            for chunk in pairs.chunks(PAIR_CHUNK) {
                let mut rows: Vec<usize> = chunk.iter().flat_map(|&(a, b)| [a, b]).collect();
                rows.sort_unstable();
                rows.dedup();
                let factors = state.derivative_factors(ds.features(), &rows, logit)?;
                let pos = |r: usize| rows.binary_search(&r).unwrap_or(0);
                for &(a, b) in chunk {
                    match factors.angle(pos(a), pos(b)) {
                        Ok(t) => hist.record(t),
                        Err(_) => hist.skipped += 1,
                    }
                }
            }
            Ok(hist)
        }
        HistogramKind::CleanVsRef | HistogramKind::NoiseVsRef | HistogramKind::OtherVsRef => {
            vs_reference(state, ds, class, kind, mode, convention)
        }
    }
}

fn ensure_factorable(state: &NetworkState, mode: GradientMode) -> Result<()> {
    if mode == GradientMode::Full && state.config().num_logits > 1 {
        return Err(Error::Unsupported(
            "gradient-vs-reference angles need a sigmoid head or single-logit mode".into(),
        ));
    }
    Ok(())
}

/// Per-row `θ_g` against `reference`, from `sign(r_i)·⟨∇h, ref⟩/(‖∇h‖‖ref‖)`.
fn gradient_angles(
    state: &NetworkState,
    ds: &LabeledDataset,
    rows: &[usize],
    source: LabelSource,
    mode: GradientMode,
    class: usize,
    reference: &[f64],
) -> Result<Vec<Option<f64>>> {
    let logit = logit_for(state, mode, class);
    let head = state.config().head;
    let ref_norm = norm(reference);
    let labels = source.labels(ds);
    let proj = state.derivative_projections(ds.features(), rows, logit, reference)?;
    let mut residual = Vec::with_capacity(rows.len());
    let mut u = vec![0.0; state.config().num_logits];
    state.for_each_output(ds.features(), rows, |row, _, f| {
        fill_cotangent(head, mode, class, labels[row], f, &mut u);
        residual.push(u[logit]);
    })?;
    Ok(proj
        .iter()
        .zip(&residual)
        .map(|(&(dot, sq), &r)| {
            if sq == 0.0 || r == 0.0 || ref_norm == 0.0 {
                None
            } else {
                let c = r.signum() * dot / (sq.sqrt() * ref_norm);
                Some(c.clamp(-1.0, 1.0).acos())
            }
        })
        .collect())
}

fn vs_reference(
    state: &NetworkState,
    ds: &LabeledDataset,
    class: usize,
    kind: HistogramKind,
    mode: GradientMode,
    convention: ClassConvention,
) -> Result<AngleHistogram> {
    ensure_factorable(state, mode)?;
    let clean = subset_view(ds, SubsetKind::Clean(class), convention)?;
    let noise = subset_view(ds, SubsetKind::Noise(class), convention)?;
    let other = subset_view(ds, SubsetKind::Other(class), convention)?;
    let reference = subset_sum(state, ds, clean.indices(), LabelSource::Observed, mode, class)?;
    if norm(&reference) == 0.0 {
        return Err(Error::DegenerateAngle);
    }
    let target = match kind {
        HistogramKind::CleanVsRef => &clean,
        HistogramKind::NoiseVsRef => &noise,
        _ => &other,
    };
    if target.is_empty() {
        return Err(Error::EmptySubset(format!("{} for class {class}", kind.name())));
    }
    let mut hist = AngleHistogram::new(kind, class, format!("g_clean of class {class}"));
    for t in gradient_angles(state, ds, target.indices(), LabelSource::Observed, mode, class, &reference)? {
        match t {
            Some(t) => hist.record(t),
            None => hist.skipped += 1,
        }
    }
    for (name, view) in [("g_noise", &noise), ("g_other", &other)] {
        if view.is_empty() {
            continue;
        }
        let g = subset_sum(state, ds, view.indices(), LabelSource::Observed, mode, class)?;
        if let Ok(c) = cosine(&g, &reference) {
            hist.markers.push((name.to_string(), c.acos().to_degrees()));
        }
    }
    hist.markers.insert(0, ("g_clean".to_string(), 0.0));
    Ok(hist)
}

/// For every noisy sample of class `class`: `|θ_g(noisy) + θ_g(twin) − π|`,
/// where the twin is the same input read with its ground-truth label and
/// both angles are taken against `g_clean(class)`.
pub fn mirror_residuals(
    state: &NetworkState,
    ds: &LabeledDataset,
    class: usize,
    mode: GradientMode,
    convention: ClassConvention,
) -> Result<Vec<f64>> {
    check_mode(state, mode)?;
    ensure_factorable(state, mode)?;
    let clean = subset_view(ds, SubsetKind::Clean(class), convention)?;
    let noise = subset_view(ds, SubsetKind::Noise(class), convention)?;
    let reference = subset_sum(state, ds, clean.indices(), LabelSource::Observed, mode, class)?;
    let noisy = gradient_angles(state, ds, noise.indices(), LabelSource::Observed, mode, class, &reference)?;
    let twins = gradient_angles(state, ds, noise.indices(), LabelSource::Truth, mode, class, &reference)?;
    Ok(noisy
        .iter()
        .zip(&twins)
        .filter_map(|(a, b)| Some((a.as_ref()? + b.as_ref()? - PI).abs()))
        .collect())
}
