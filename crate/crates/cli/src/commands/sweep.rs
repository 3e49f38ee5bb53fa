use std::path::Path;

use cleanprio_core::trainer::{sweep, StageSummary, Trend};
use serde::Serialize;

use crate::commands::train::train;
use crate::config::ExperimentConfig;
use crate::output::{fmt_f64, write_atomic, SweepTable};
use crate::CliError;

/// Share of consecutive early-stage pairs that must move the right way.
pub const TREND_FRACTION: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub width: Option<usize>,
    pub noise_level: Option<f64>,
    pub seed: Option<u64>,
    pub min_test_err: f64,
    pub stop_step: u64,
    pub below_noise: bool,
    pub clean_priority: bool,
}

/// Clean loss falling and noisy loss rising over the early stage, each on
/// at least 90% of consecutive pairs and in net.
pub fn clean_priority(early: &StageSummary) -> bool {
    let falls = |t: Option<Trend>| t.is_some_and(|t| t.frac_decreasing() >= TREND_FRACTION && t.net_change < 0.0);
    let rises = |t: Option<Trend>| t.is_some_and(|t| t.frac_increasing() >= TREND_FRACTION && t.net_change > 0.0);
    falls(early.loss_clean) && rises(early.loss_noise)
}

#[derive(Debug, Clone)]
struct Point {
    width: Option<usize>,
    noise_level: Option<f64>,
    seed: Option<u64>,
}

fn axis<T: Copy>(values: &[T]) -> Vec<Option<T>> {
    if values.is_empty() {
        vec![None]
    } else {
        values.iter().copied().map(Some).collect()
    }
}

/// Trains once per point of the product of the non-empty axes, writes each
/// run under `out/runs/NNN/` and the aggregate to `out/sweep.csv`.
pub fn run_sweep(cfg: &ExperimentConfig, jobs: usize, out: &Path) -> Result<Vec<SweepRow>, CliError> {
    cfg.validate()?;
    let axes = &cfg.sweep;
    if axes.widths.is_empty() && axes.noise_levels.is_empty() && axes.seeds.is_empty() {
        return Err(CliError::Usage("sweep needs at least one non-empty axis".into()));
    }
    if jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    let mut points = Vec::new();
    for width in axis(&axes.widths) {
        for noise_level in axis(&axes.noise_levels) {
            for seed in axis(&axes.seeds) {
                points.push(Point { width, noise_level, seed });
            }
        }
    }
    let results = sweep(&points, jobs, |i, p| -> Result<SweepRow, CliError> {
        let mut run_cfg = cfg.clone();
        if let Some(w) = p.width {
            run_cfg.network.hidden.iter_mut().for_each(|h| *h = w);
        }
        if let Some(d) = p.noise_level {
            run_cfg.noise_level = d;
        }
        if let Some(s) = p.seed {
            run_cfg.seed = s;
        }
        let outcome = train(&run_cfg, &out.join("runs").join(format!("{i:03}")))?;
        if let Some(e) = outcome.trace.error {
            return Err(CliError::Run(format!("sweep point {i}: {e}")));
        }
        let (stop, stages) = outcome
            .stop
            .zip(outcome.stages)
            .ok_or_else(|| CliError::Usage(format!("sweep point {i}: too few checkpoints for early stopping")))?;
        Ok(SweepRow {
            width: p.width,
            noise_level: p.noise_level,
            seed: p.seed,
            min_test_err: stop.min_test_err,
            stop_step: stop.stop_step,
            below_noise: stop.below_noise,
            clean_priority: clean_priority(&stages.early),
        })
    });
    let rows = results.into_iter().collect::<Result<Vec<_>, _>>()?;

    let mut names = Vec::new();
    if !axes.widths.is_empty() {
        names.push("width");
    }
    if !axes.noise_levels.is_empty() {
        names.push("noise_level");
    }
    if !axes.seeds.is_empty() {
        names.push("seed");
    }
    let mut table = SweepTable::new(names);
    for r in &rows {
        let mut values = Vec::new();
        if let Some(w) = r.width {
            values.push(w.to_string());
        }
        if let Some(d) = r.noise_level {
            values.push(fmt_f64(d));
        }
        if let Some(s) = r.seed {
            values.push(s.to_string());
        }
        table.push(values, r.min_test_err, r.stop_step, r.below_noise, r.clean_priority);
    }
    write_atomic(&out.join("sweep.csv"), table.to_csv().as_bytes())?;
    Ok(rows)
}
