use std::path::Path;

use cleanprio_core::analysis::{
    angle_histogram, evaluate, expected_binary_ratio, expected_multiclass_ratio, full_vs_truth_cosine,
    gradient_census, mirror_residuals, AngleHistogram, GradientMode, HistogramKind, ResidualStats, SubsetGradients,
};
use cleanprio_core::{ClassConvention, Error, Head};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::output::{histogram_csv, write_atomic, write_json};
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub class: usize,
    pub n_clean: usize,
    pub n_noise: usize,
    pub n_other: usize,
    pub norm_clean: f64,
    pub norm_noise: Option<f64>,
    pub norm_other: f64,
    pub norm_hat: f64,
    pub ratio: Option<f64>,
    pub alpha_hat: Option<f64>,
    pub cos_clean_noise: Option<f64>,
    pub cos_clean_other: Option<f64>,
    pub degenerate: bool,
    /// Worst `|θ_g(noisy) + θ_g(twin) − π|` over the noisy samples.
    pub mirror_max_residual: Option<f64>,
}

impl ClassSummary {
    fn of(s: &SubsetGradients, mirror_max_residual: Option<f64>) -> Self {
        let ratio = s.ratio();
        Self {
            class: s.class,
            n_clean: s.n_clean,
            n_noise: s.n_noise,
            n_other: s.n_other,
            norm_clean: s.norm_clean,
            norm_noise: s.norm_noise,
            norm_other: s.norm_other,
            norm_hat: s.norm_hat,
            ratio,
            alpha_hat: ratio.map(|r| 1.0 / r),
            cos_clean_noise: s.cos_clean_noise,
            cos_clean_other: s.cos_clean_other,
            degenerate: ratio.is_none(),
            mirror_max_residual,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramInfo {
    pub kind: HistogramKind,
    pub class: usize,
    pub total: u64,
    pub skipped: usize,
    pub median_deg: Option<f64>,
    pub reference: String,
    pub markers: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitSummary {
    pub name: String,
    pub noise_level: f64,
    pub num_classes: usize,
    pub n_train: usize,
    pub mode: GradientMode,
    pub convention: ClassConvention,
    /// `(1 − δ)/δ` for two classes, `(C − 1)(1 − δ)/δ` otherwise; absent at δ = 0.
    pub expected_ratio: Option<f64>,
    /// Mean ratio over the tracked classes that have one.
    pub class_mean_ratio: Option<f64>,
    pub cos_full_vs_truth: Option<f64>,
    pub residuals: ResidualStats,
    pub classes: Vec<ClassSummary>,
    pub histograms: Vec<HistogramInfo>,
    /// Histograms not produced, with the reason.
    pub skipped_histograms: Vec<String>,
    pub notes: Vec<String>,
}

/// Gradient geometry at initialization: writes `theta_hist.csv` and
/// `init_summary.json` under `out`.
pub fn analyze_init(cfg: &ExperimentConfig, out: &Path) -> Result<InitSummary, CliError> {
    cfg.validate()?;
    let data = cfg.prepare()?;
    let state = cfg.init_network(&data)?;
    let ds = &data.train;
    let inst = &cfg.instrument;
    let delta = ds.noise_level();
    let classes = ds.num_classes();

    let census = gradient_census(&state, ds, &inst.classes, inst.mode, inst.convention)?;
    let mut class_summaries = Vec::with_capacity(census.len());
    for s in &census {
        let mirror = if s.n_noise == 0 {
            None
        } else {
            match mirror_residuals(&state, ds, s.class, inst.mode, inst.convention) {
                Ok(r) => r.into_iter().reduce(f64::max),
                Err(Error::Unsupported(_)) => None,
                Err(e) => return Err(e.into()),
            }
        };
        class_summaries.push(ClassSummary::of(s, mirror));
    }

    let mut rng = cfg.histogram_rng();
    let mut hists: Vec<AngleHistogram> = Vec::new();
    let mut skipped = Vec::new();
    let vs_ref_supported = state.config().head == Head::Sigmoid || inst.mode == GradientMode::SingleLogit;
    for s in &census {
        for kind in HistogramKind::ALL {
            let label = format!("{} class {}", kind.name(), s.class);
            let vs_ref = !matches!(kind, HistogramKind::Within | HistogramKind::Between);
            if vs_ref && !vs_ref_supported {
                skipped.push(format!("{label}: needs a sigmoid head or single_logit mode"));
                continue;
            }
            if kind == HistogramKind::NoiseVsRef && s.n_noise == 0 {
                skipped.push(format!("{label}: class has no noisy samples"));
                continue;
            }
            match angle_histogram(&state, ds, s.class, kind, inst.mode, inst.convention, inst.pair_budget, &mut rng) {
                Ok(h) => hists.push(h),
                Err(e @ (Error::EmptySubset(_) | Error::DegenerateAngle)) => skipped.push(format!("{label}: {e}")),
                Err(e) => return Err(e.into()),
            }
        }
    }

    let ratios: Vec<f64> = class_summaries.iter().filter_map(|c| c.ratio).collect();
    let mut notes = Vec::new();
    if class_summaries.iter().any(|c| c.degenerate) {
        notes.push("some tracked classes have degenerate subsets (no noisy samples or a vanishing clean gradient); their ratios are absent".into());
    }
    let summary = InitSummary {
        name: cfg.name.clone(),
        noise_level: delta,
        num_classes: classes,
        n_train: ds.len(),
        mode: inst.mode,
        convention: inst.convention,
        expected_ratio: (delta > 0.0).then(|| {
            if classes == 2 {
                expected_binary_ratio(delta)
            } else {
                expected_multiclass_ratio(classes, delta)
            }
        }),
        class_mean_ratio: (!ratios.is_empty()).then(|| ratios.iter().sum::<f64>() / ratios.len() as f64),
        cos_full_vs_truth: full_vs_truth_cosine(&state, ds)?,
        residuals: evaluate(&state, ds)?.residuals,
        classes: class_summaries,
        histograms: hists
            .iter()
            .map(|h| HistogramInfo {
                kind: h.kind,
                class: h.class,
                total: h.total(),
                skipped: h.skipped,
                median_deg: h.median_deg(),
                reference: h.reference.clone(),
                markers: h.markers.clone(),
            })
            .collect(),
        skipped_histograms: skipped,
        notes,
    };
    write_atomic(&out.join("theta_hist.csv"), histogram_csv(&hists).as_bytes())?;
    write_json(&out.join("init_summary.json"), &summary)?;
    Ok(summary)
}
