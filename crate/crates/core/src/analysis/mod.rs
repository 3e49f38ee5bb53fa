//! Subset gradients, dominance ratios, residual statistics and angle
//! histograms measured at a fixed network state.
//!
//! Subset sums are streamed through the batched engine; no per-sample
//! gradient is ever stored.

mod histogram;
mod metrics;

use serde::{Deserialize, Serialize};

pub use histogram::{angle_histogram, mirror_residuals, AngleHistogram, HistogramKind, NUM_BINS};
pub use metrics::{evaluate, residual_stats, Evaluation, ResidualStats};

use crate::data::{subset_view, ClassConvention, LabeledDataset, SubsetKind};
use crate::error::{Error, Result};
use crate::network::{Head, NetworkState};
use crate::numcore::{add_assign, cosine, norm, relative_error};

/// Which sample-wise gradient the subset sums are built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    /// `Σ_c (f_c − y_c)∇h_c`
    #[default]
    Full,
    /// `(f_c − y_c)∇h_c` for the logit of the class being analyzed.
    SingleLogit,
}

/// Which label each row is read with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum LabelSource {
    Observed,
    Truth,
}

impl LabelSource {
    pub(crate) fn labels(self, ds: &LabeledDataset) -> &[usize] {
        match self {
            LabelSource::Observed => ds.labels(),
            LabelSource::Truth => ds.truth(),
        }
    }
}

pub(crate) fn check_mode(state: &NetworkState, mode: GradientMode) -> Result<()> {
    if mode == GradientMode::SingleLogit && state.config().head != Head::Softmax {
        return Err(Error::Unsupported("single-logit mode needs a softmax head".into()));
    }
    Ok(())
}

/// Logit whose derivative carries class `class` in the given mode.
pub(crate) fn logit_for(state: &NetworkState, mode: GradientMode, class: usize) -> usize {
    match mode {
        GradientMode::SingleLogit => class,
        GradientMode::Full => {
            if state.config().head == Head::Sigmoid {
                0
            } else {
                class
            }
        }
    }
}

/// Writes the logit cotangent of one sample with label `label`.
pub(crate) fn fill_cotangent(
    head: Head,
    mode: GradientMode,
    class: usize,
    label: usize,
    outputs: &[f64],
    u: &mut [f64],
) {
    match (head, mode) {
        (Head::Sigmoid, _) => u[0] = outputs[0] - label as f64,
        (Head::Softmax, GradientMode::Full) => {
            u.copy_from_slice(outputs);
            u[label] -= 1.0;
        }
        (Head::Softmax, GradientMode::SingleLogit) => {
            u.iter_mut().for_each(|v| *v = 0.0);
            u[class] = outputs[class] - f64::from(u8::from(label == class));
        }
    }
}

/// Sum of sample-wise gradients over `rows`, labels read from `source`.
pub(crate) fn subset_sum(
    state: &NetworkState,
    ds: &LabeledDataset,
    rows: &[usize],
    source: LabelSource,
    mode: GradientMode,
    class: usize,
) -> Result<Vec<f64>> {
    let head = state.config().head;
    let labels = source.labels(ds);
    state.accumulate_gradient(ds.features(), rows, |row, f, u| {
        fill_cotangent(head, mode, class, labels[row], f, u)
    })
}

/// Sum of full sample-wise gradients over the whole training set with
/// observed labels, i.e. `n·∇L(w; D)`.
pub fn total_gradient(state: &NetworkState, ds: &LabeledDataset) -> Result<Vec<f64>> {
    let rows: Vec<usize> = (0..ds.len()).collect();
    subset_sum(state, ds, &rows, LabelSource::Observed, GradientMode::Full, 0)
}

/// Summed gradients of one class's clean, noisy and other subsets.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetGradients {
    pub class: usize,
    pub mode: GradientMode,
    pub g_clean: Vec<f64>,
    /// Absent when the class has no noisy samples.
    pub g_noise: Option<Vec<f64>>,
    pub g_other: Vec<f64>,
    /// Truth-labeled sum over the class.
    pub g_hat: Vec<f64>,
    pub n_clean: usize,
    pub n_noise: usize,
    pub n_other: usize,
    pub norm_clean: f64,
    pub norm_noise: Option<f64>,
    pub norm_other: f64,
    pub norm_hat: f64,
    pub cos_clean_noise: Option<f64>,
    pub cos_clean_other: Option<f64>,
}

impl SubsetGradients {
    /// `‖g_clean‖ / ‖g_noise‖`, absent when either side is missing or zero.
    pub fn ratio(&self) -> Option<f64> {
        match self.norm_noise {
            Some(nn) if nn > 0.0 && self.norm_clean > 0.0 => Some(self.norm_clean / nn),
            _ => None,
        }
    }
}

/// Reference implementation for one class: every subset is summed directly.
pub fn subset_gradients(
    state: &NetworkState,
    ds: &LabeledDataset,
    class: usize,
    mode: GradientMode,
    convention: ClassConvention,
) -> Result<SubsetGradients> {
    check_mode(state, mode)?;
    let clean = subset_view(ds, SubsetKind::Clean(class), convention)?;
    let noise = subset_view(ds, SubsetKind::Noise(class), convention)?;
    let other = subset_view(ds, SubsetKind::Other(class), convention)?;
    let truth_class = subset_view(ds, SubsetKind::Class(class), ClassConvention::GroundTruth)?;
    let sum = |rows: &[usize], src| subset_sum(state, ds, rows, src, mode, class);
    let g_clean = sum(clean.indices(), LabelSource::Observed)?;
    let g_noise = if noise.is_empty() {
        None
    } else {
        Some(sum(noise.indices(), LabelSource::Observed)?)
    };
    let g_other = sum(other.indices(), LabelSource::Observed)?;
    let g_hat = sum(truth_class.indices(), LabelSource::Truth)?;
    Ok(assemble(
        class,
        mode,
        g_clean,
        g_noise,
        g_other,
        g_hat,
        [clean.len(), noise.len(), other.len()],
    ))
}

fn assemble(
    class: usize,
    mode: GradientMode,
    g_clean: Vec<f64>,
    g_noise: Option<Vec<f64>>,
    g_other: Vec<f64>,
    g_hat: Vec<f64>,
    sizes: [usize; 3],
) -> SubsetGradients {
    let norm_clean = norm(&g_clean);
    let norm_noise = g_noise.as_deref().map(norm);
    let cos_clean_noise = g_noise.as_deref().and_then(|g| cosine(&g_clean, g).ok());
    let cos_clean_other = cosine(&g_clean, &g_other).ok();
    SubsetGradients {
        class,
        mode,
        norm_other: norm(&g_other),
        norm_hat: norm(&g_hat),
        g_clean,
        g_noise,
        g_other,
        g_hat,
        n_clean: sizes[0],
        n_noise: sizes[1],
        n_other: sizes[2],
        norm_clean,
        norm_noise,
        cos_clean_noise,
        cos_clean_other,
    }
}

/// Subset gradients for several classes at once.
///
/// In full mode the clean sums are shared: `g_other(c) = Σ_{c'≠c} g_clean(c')`
/// and `ĝ(c)` adds the truth-labeled noisy rows of class `c` to `g_clean(c)`
/// (ground-truth convention). Single-logit mode and the observed-label
/// convention fall back to direct sums.
pub fn gradient_census(
    state: &NetworkState,
    ds: &LabeledDataset,
    classes: &[usize],
    mode: GradientMode,
    convention: ClassConvention,
) -> Result<Vec<SubsetGradients>> {
    check_mode(state, mode)?;
    if mode == GradientMode::SingleLogit || convention == ClassConvention::Observed {
        return classes
            .iter()
            .map(|&c| subset_gradients(state, ds, c, mode, convention))
            .collect();
    }
    let k = ds.num_classes();
    let mut clean = Vec::with_capacity(k);
    let mut noise = Vec::with_capacity(k);
    for c in 0..k {
        let cv = subset_view(ds, SubsetKind::Clean(c), convention)?;
        let nv = subset_view(ds, SubsetKind::Noise(c), convention)?;
        let gc = subset_sum(state, ds, cv.indices(), LabelSource::Observed, mode, c)?;
        clean.push((gc, cv.len()));
        noise.push(nv);
    }
    let mut out = Vec::with_capacity(classes.len());
    for &c in classes {
        if c >= k {
            return Err(Error::invalid(format!("unknown class {c} ({k} classes)")));
        }
        let nv = &noise[c];
        let g_clean = clean[c].0.clone();
        let mut g_other = vec![0.0; state.param_count()];
        let mut n_other = 0;
        for (c2, (g, n)) in clean.iter().enumerate() {
            if c2 != c {
                add_assign(&mut g_other, g);
                n_other += n;
            }
        }
        let (g_noise, g_hat) = if nv.is_empty() {
            (None, g_clean.clone())
        } else {
            let gn = subset_sum(state, ds, nv.indices(), LabelSource::Observed, mode, c)?;
            let mut gh = g_clean.clone();
            add_assign(&mut gh, &subset_sum(state, ds, nv.indices(), LabelSource::Truth, mode, c)?);
            (Some(gn), gh)
        };
        out.push(assemble(
            c,
            mode,
            g_clean,
            g_noise,
            g_other,
            g_hat,
            [clean[c].1, nv.len(), n_other],
        ));
    }
    Ok(out)
}

/// Relative error between `Σ_c (g_clean(c) + g_noise(c))` and `n·∇L(w; D)`.
pub fn decomposition_error(
    state: &NetworkState,
    ds: &LabeledDataset,
    convention: ClassConvention,
) -> Result<f64> {
    let classes: Vec<usize> = (0..ds.num_classes()).collect();
    let census = gradient_census(state, ds, &classes, GradientMode::Full, convention)?;
    let mut rebuilt = vec![0.0; state.param_count()];
    for s in &census {
        add_assign(&mut rebuilt, &s.g_clean);
        if let Some(g) = &s.g_noise {
            add_assign(&mut rebuilt, g);
        }
    }
    Ok(relative_error(&rebuilt, &total_gradient(state, ds)?))
}

/// Clean-over-noisy dominance of one class at one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DominanceRecord {
    pub step: u64,
    pub class: usize,
    pub ratio: Option<f64>,
    pub alpha_hat: Option<f64>,
    pub cos_clean_noise: Option<f64>,
    /// Cosine between the observed-label and truth-label full gradients.
    pub cos_full_vs_truth: Option<f64>,
    pub eta_effective: Option<f64>,
    /// Set when `g_clean` vanishes or the class has no noisy samples.
    pub degenerate: bool,
}

/// `η′ = (1 − α)/(1 + α)·η`.
pub fn effective_learning_rate(alpha: f64, eta: f64) -> f64 {
    (1.0 - alpha) / (1.0 + alpha) * eta
}

/// `(1 − δ)/δ`
pub fn expected_binary_ratio(delta: f64) -> f64 {
    (1.0 - delta) / delta
}

/// `(C − 1)(1 − δ)/δ`; reduces to the binary value for `C = 2`.
pub fn expected_multiclass_ratio(classes: usize, delta: f64) -> f64 {
    (classes as f64 - 1.0) * expected_binary_ratio(delta)
}

pub(crate) fn record_from(
    step: u64,
    s: &SubsetGradients,
    cos_full_vs_truth: Option<f64>,
    eta: f64,
) -> DominanceRecord {
    let degenerate = s.norm_clean == 0.0 || s.norm_noise.is_none_or(|n| n == 0.0);
    let (ratio, alpha_hat) = if degenerate {
        (None, None)
    } else {
        let nn = s.norm_noise.unwrap_or(0.0);
        (Some(s.norm_clean / nn), Some(nn / s.norm_clean))
    };
    DominanceRecord {
        step,
        class: s.class,
        ratio,
        alpha_hat,
        cos_clean_noise: s.cos_clean_noise,
        cos_full_vs_truth,
        eta_effective: alpha_hat.map(|a| effective_learning_rate(a, eta)),
        degenerate,
    }
}

/// `cos(∇L(w; D), ∇L(w; D̂))` with full sample-wise gradients.
pub fn full_vs_truth_cosine(state: &NetworkState, ds: &LabeledDataset) -> Result<Option<f64>> {
    let rows: Vec<usize> = (0..ds.len()).collect();
    let clean: Vec<usize> = rows.iter().copied().filter(|&i| !ds.noise_mask()[i]).collect();
    let noisy: Vec<usize> = rows.iter().copied().filter(|&i| ds.noise_mask()[i]).collect();
    let base = subset_sum(state, ds, &clean, LabelSource::Observed, GradientMode::Full, 0)?;
    let mut obs = base.clone();
    let mut tru = base;
    add_assign(&mut obs, &subset_sum(state, ds, &noisy, LabelSource::Observed, GradientMode::Full, 0)?);
    add_assign(&mut tru, &subset_sum(state, ds, &noisy, LabelSource::Truth, GradientMode::Full, 0)?);
    Ok(cosine(&obs, &tru).ok())
}

/// Dominance records for the listed classes. Needs only clean and noisy
/// sums, so `g_other` and `ĝ` are not computed.
///
/// In full mode the per-class sums of every class also give the
/// observed-label total, so the full-versus-truth cosine costs one extra
/// pass over the noisy rows only.
pub fn dominance_records(
    state: &NetworkState,
    ds: &LabeledDataset,
    classes: &[usize],
    mode: GradientMode,
    convention: ClassConvention,
    eta: f64,
    step: u64,
) -> Result<Vec<DominanceRecord>> {
    check_mode(state, mode)?;
    if let Some(&bad) = classes.iter().find(|&&c| c >= ds.num_classes()) {
        return Err(Error::invalid(format!("unknown class {bad} ({} classes)", ds.num_classes())));
    }
    let all: Vec<usize> = (0..ds.num_classes()).collect();
    let wanted: &[usize] = if mode == GradientMode::Full { &all } else { classes };
    let mut sums = Vec::with_capacity(wanted.len());
    for &c in wanted {
        let cv = subset_view(ds, SubsetKind::Clean(c), convention)?;
        let nv = subset_view(ds, SubsetKind::Noise(c), convention)?;
        let g_clean = subset_sum(state, ds, cv.indices(), LabelSource::Observed, mode, c)?;
        let g_noise = if nv.is_empty() {
            None
        } else {
            Some(subset_sum(state, ds, nv.indices(), LabelSource::Observed, mode, c)?)
        };
        sums.push((c, g_clean, g_noise, [cv.len(), nv.len(), 0]));
    }
    let n_noisy = ds.noise_mask().iter().filter(|&&m| m).count();
    let covered: usize = sums.iter().map(|s| s.3[0] + s.3[1]).sum();
    let noisy_covered: usize = sums.iter().map(|s| s.3[1]).sum();
    let cos_full = if mode == GradientMode::Full && covered == ds.len() && noisy_covered == n_noisy {
        let mut obs = vec![0.0; state.param_count()];
        let mut clean_total = vec![0.0; state.param_count()];
        for (_, gc, gn, _) in &sums {
            add_assign(&mut clean_total, gc);
            if let Some(gn) = gn {
                add_assign(&mut obs, gn);
            }
        }
        add_assign(&mut obs, &clean_total);
        let noisy: Vec<usize> = (0..ds.len()).filter(|&i| ds.noise_mask()[i]).collect();
        let mut tru = clean_total;
        add_assign(&mut tru, &subset_sum(state, ds, &noisy, LabelSource::Truth, GradientMode::Full, 0)?);
        cosine(&obs, &tru).ok()
    } else {
        full_vs_truth_cosine(state, ds)?
    };
    Ok(classes
        .iter()
        .map(|&c| {
            let (_, gc, gn, sizes) = sums.iter().find(|s| s.0 == c).expect("class was summed");
            let s = assemble(c, mode, gc.clone(), gn.clone(), Vec::new(), Vec::new(), *sizes);
            record_from(step, &s, cos_full, eta)
        })
        .collect())
}

/// Single-logit `‖g_clean(c)‖/‖g_noise(c)‖`; `None` when class `c` has no
/// noisy samples.
pub fn multiclass_init_ratio(state: &NetworkState, ds: &LabeledDataset, class: usize) -> Result<Option<f64>> {
    check_mode(state, GradientMode::SingleLogit)?;
    let cv = subset_view(ds, SubsetKind::Clean(class), ClassConvention::GroundTruth)?;
    let nv = subset_view(ds, SubsetKind::Noise(class), ClassConvention::GroundTruth)?;
    if nv.is_empty() {
        return Ok(None);
    }
    let mode = GradientMode::SingleLogit;
    let gc = subset_sum(state, ds, cv.indices(), LabelSource::Observed, mode, class)?;
    let gn = subset_sum(state, ds, nv.indices(), LabelSource::Observed, mode, class)?;
    let nn = norm(&gn);
    Ok((nn > 0.0).then(|| norm(&gc) / nn))
}
