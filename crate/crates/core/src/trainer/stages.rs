//! Early-stopping detection and the early/later stage summaries around it.

use serde::{Deserialize, Serialize};

use super::{Checkpoint, DynamicsTrace};
use crate::error::{Error, Result};

const MEDIAN_WINDOW: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopReport {
    pub stop_step: u64,
    pub stop_index: usize,
    /// Raw test error at the stopping checkpoint.
    pub stop_test_err: f64,
    /// Smallest raw test error over all checkpoints.
    pub min_test_err: f64,
    pub final_test_err: f64,
    pub noise_level: f64,
    /// Whether the smallest test error is below the noise level.
    pub below_noise: bool,
}

/// Centered running median; the window shrinks symmetrically near the ends
/// so every entry is the median of an odd number of neighbours.
fn centered_median(values: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    let n = values.len();
    (0..n)
        .map(|i| {
            let h = half.min(i).min(n - 1 - i);
            let mut w = values[i - h..=i + h].to_vec();
            w.sort_by(f64::total_cmp);
            w[h]
        })
        .collect()
}

fn earliest_argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v < values[best] {
            best = i;
        }
    }
    best
}

/// Locates the stopping point on a test-error series.
///
/// The series is smoothed with a centered median over five checkpoints and
/// its earliest minimum is taken. Because the median can move a sharp
/// minimum by a checkpoint or two, the result is then refined to the
/// earliest raw minimum within the same five-checkpoint window.
pub fn stop_index(test_err: &[f64]) -> Result<usize> {
    if test_err.len() < 3 {
        return Err(Error::TooFewCheckpoints { needed: 3, got: test_err.len() });
    }
    let smooth = centered_median(test_err, MEDIAN_WINDOW);
    let k = earliest_argmin(&smooth);
    let half = MEDIAN_WINDOW / 2;
    let lo = k.saturating_sub(half);
    let hi = (k + half).min(test_err.len() - 1);
    Ok(lo + earliest_argmin(&test_err[lo..=hi]))
}

pub fn detect_early_stop(trace: &DynamicsTrace) -> Result<EarlyStopReport> {
    let errs = trace
        .checkpoints
        .iter()
        .map(|c| c.test.map(|t| t.err))
        .collect::<Option<Vec<f64>>>()
        .ok_or_else(|| Error::invalid("early stopping needs test metrics at every checkpoint"))?;
    let idx = stop_index(&errs)?;
    let stop_test_err = errs[idx];
    let min_test_err = errs.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(EarlyStopReport {
        stop_step: trace.checkpoints[idx].step,
        stop_index: idx,
        stop_test_err,
        min_test_err,
        final_test_err: errs[errs.len() - 1],
        noise_level: trace.noise_level,
        below_noise: min_test_err < trace.noise_level,
    })
}

/// Direction counts over consecutive pairs of a series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trend {
    pub pairs: usize,
    pub increasing: usize,
    pub decreasing: usize,
    /// Last value minus first.
    pub net_change: f64,
}

impl Trend {
    pub fn of(series: &[f64]) -> Option<Trend> {
        if series.len() < 2 {
            return None;
        }
        let mut t = Trend {
            pairs: series.len() - 1,
            increasing: 0,
            decreasing: 0,
            net_change: series[series.len() - 1] - series[0],
        };
        for w in series.windows(2) {
            if w[1] > w[0] {
                t.increasing += 1;
            } else if w[1] < w[0] {
                t.decreasing += 1;
            }
        }
        Some(t)
    }

    pub fn frac_increasing(&self) -> f64 {
        self.increasing as f64 / self.pairs as f64
    }

    pub fn frac_decreasing(&self) -> f64 {
        self.decreasing as f64 / self.pairs as f64
    }
}

/// Trends of the subset measurements over one stage. Noise fields are
/// absent when the training set has no noisy samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub from_step: u64,
    pub to_step: u64,
    pub loss_clean: Option<Trend>,
    pub loss_noise: Option<Trend>,
    pub err_clean: Option<Trend>,
    pub err_noise: Option<Trend>,
    pub resid_clean: Option<Trend>,
    pub resid_noise: Option<Trend>,
    /// Class-mean dominance ratio over the instrumented checkpoints.
    pub ratio: Option<Trend>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub early: StageSummary,
    /// Absent when the stopping point is the last checkpoint.
    pub later: Option<StageSummary>,
}

fn series<F: Fn(&Checkpoint) -> Option<f64>>(cps: &[Checkpoint], f: F) -> Option<Trend> {
    let values = cps.iter().map(f).collect::<Option<Vec<f64>>>()?;
    Trend::of(&values)
}

fn summarize(cps: &[Checkpoint]) -> StageSummary {
    let ratios: Vec<f64> = cps.iter().filter(|c| c.instrumented()).filter_map(Checkpoint::mean_ratio).collect();
    StageSummary {
        from_step: cps[0].step,
        to_step: cps[cps.len() - 1].step,
        loss_clean: series(cps, |c| c.train.loss_clean),
        loss_noise: series(cps, |c| c.train.loss_noise),
        err_clean: series(cps, |c| c.train.err_clean),
        err_noise: series(cps, |c| c.train.err_noise),
        resid_clean: series(cps, |c| c.train.residuals.clean),
        resid_noise: series(cps, |c| c.train.residuals.noise),
        ratio: Trend::of(&ratios),
    }
}

/// Early stage: checkpoints up to and including the stopping point; later
/// stage: from the stopping point to the end.
pub fn stage_report(trace: &DynamicsTrace, stop: &EarlyStopReport) -> Result<StageReport> {
    let cps = &trace.checkpoints;
    if stop.stop_index >= cps.len() {
        return Err(Error::invalid("stopping point lies outside the trace"));
    }
    let early = summarize(&cps[..=stop.stop_index]);
    let later = (stop.stop_index + 1 < cps.len()).then(|| summarize(&cps[stop.stop_index..]));
    Ok(StageReport { early, later })
}
