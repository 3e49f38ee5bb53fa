//! Plot-data files: CSV tables with fixed column orders and JSON summaries,
//! all written atomically.

use std::fs;
use std::path::{Path, PathBuf};

use cleanprio_core::analysis::AngleHistogram;
use cleanprio_core::theory::AngleCurve;
use cleanprio_core::trainer::DynamicsTrace;
use serde::Serialize;

use crate::CliError;

/// Default output directory when `--out` is not given.
pub const OUT_DIR_ENV: &str = "CLEANPRIO_OUT_DIR";

pub const TRACE_COLUMNS: [&str; 12] = [
    "step",
    "loss_total",
    "loss_clean",
    "loss_noise",
    "loss_truth",
    "err_total",
    "err_clean",
    "err_noise",
    "test_loss",
    "test_err",
    "resid_clean",
    "resid_noise",
];

pub const ANGLE_CURVE_COLUMNS: [&str; 7] =
    ["theta_d_rad", "theta_h_closed", "theta_h_mc_mean", "theta_h_mc_se", "kind", "depth", "width"];

pub const HISTOGRAM_COLUMNS: [&str; 5] = ["kind", "class", "bin_low_deg", "bin_high_deg", "count"];

pub const SWEEP_RESULT_COLUMNS: [&str; 4] = ["min_test_err", "stop_step", "below_noise", "clean_priority"];

/// Shortest representation that parses back to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

/// Writes `bytes` to a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Io(format!("writing {}: {e}", path.display()));
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("summary serializes");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn push_row(out: &mut String, fields: &[String]) {
    out.push_str(&fields.join(","));
    out.push('\n');
}

pub fn trace_header(classes: &[usize]) -> Vec<String> {
    let mut cols: Vec<String> = TRACE_COLUMNS.iter().map(|s| s.to_string()).collect();
    for c in classes {
        for prefix in ["ratio", "alpha", "cos_cn", "eta_eff"] {
            cols.push(format!("{prefix}_{c}"));
        }
    }
    cols
}

/// One row per checkpoint. Fields that do not apply are left empty,
/// including the per-class block at uninstrumented checkpoints.
pub fn trace_csv(trace: &DynamicsTrace) -> String {
    let mut out = String::new();
    push_row(&mut out, &trace_header(&trace.tracked_classes));
    for cp in &trace.checkpoints {
        let e = &cp.train;
        let mut row = vec![
            cp.step.to_string(),
            fmt_f64(e.loss_total),
            fmt_opt(e.loss_clean),
            fmt_opt(e.loss_noise),
            fmt_f64(e.loss_truth),
            fmt_f64(e.err_total),
            fmt_opt(e.err_clean),
            fmt_opt(e.err_noise),
            fmt_opt(cp.test.map(|t| t.loss)),
            fmt_opt(cp.test.map(|t| t.err)),
            fmt_opt(e.residuals.clean),
            fmt_opt(e.residuals.noise),
        ];
        for &c in &trace.tracked_classes {
            match cp.dominance.iter().find(|r| r.class == c) {
                Some(r) => row.extend([
                    fmt_opt(r.ratio),
                    fmt_opt(r.alpha_hat),
                    fmt_opt(r.cos_clean_noise),
                    fmt_opt(r.eta_effective),
                ]),
                None => row.extend(std::iter::repeat_n(String::new(), 4)),
            }
        }
        push_row(&mut out, &row);
    }
    out
}

pub fn angle_curve_csv(curves: &[AngleCurve]) -> String {
    let mut out = String::new();
    push_row(&mut out, &ANGLE_CURVE_COLUMNS.map(String::from));
    for curve in curves {
        let kind = serde_json::to_value(curve.kind).expect("activation serializes");
        let kind = kind.as_str().unwrap_or_default().to_string();
        for (k, &t) in curve.theta_d.iter().enumerate() {
            push_row(
                &mut out,
                &[
                    fmt_f64(t),
                    fmt_opt(curve.closed.as_ref().map(|c| c[k])),
                    fmt_f64(curve.mc[k].mean),
                    fmt_f64(curve.mc[k].std_err),
                    kind.clone(),
                    curve.depth.to_string(),
                    curve.width.to_string(),
                ],
            );
        }
    }
    out
}

/// Bins are one degree wide; the last bin holds exactly 180°.
pub fn histogram_csv(hists: &[AngleHistogram]) -> String {
    let mut out = String::new();
    push_row(&mut out, &HISTOGRAM_COLUMNS.map(String::from));
    for h in hists {
        for (b, count) in h.counts.iter().enumerate() {
            push_row(
                &mut out,
                &[
                    h.kind.name().to_string(),
                    h.class.to_string(),
                    b.to_string(),
                    (b + 1).min(180).to_string(),
                    count.to_string(),
                ],
            );
        }
    }
    out
}

/// Aggregate sweep table: axis columns followed by the per-run results.
pub struct SweepTable {
    pub axes: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

impl SweepTable {
    pub fn new(axes: Vec<&'static str>) -> Self {
        Self { axes, rows: Vec::new() }
    }

    pub fn push(&mut self, axis_values: Vec<String>, min_test_err: f64, stop_step: u64, below_noise: bool, clean_priority: bool) {
        let mut row = axis_values;
        row.extend([
            fmt_f64(min_test_err),
            stop_step.to_string(),
            below_noise.to_string(),
            clean_priority.to_string(),
        ]);
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let mut header: Vec<String> = self.axes.iter().map(|s| s.to_string()).collect();
        header.extend(SWEEP_RESULT_COLUMNS.map(String::from));
        push_row(&mut out, &header);
        for row in &self.rows {
            push_row(&mut out, row);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for x in [0.1, 1.0 / 3.0, 2.0, 1e-300, 123456.789, -0.0] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
        }
        assert_eq!(fmt_f64(0.5), "0.5");
        assert_eq!(fmt_f64(2.0), "2");
        assert_eq!(fmt_opt(None), "");
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/out.csv");
        write_atomic(&path, b"a\n").unwrap();
        write_atomic(&path, b"b\n").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"b\n");
        assert!(!dir.path().join("nested/out.csv.tmp").exists());
    }

    #[test]
    fn trace_header_order() {
        assert_eq!(
            trace_header(&[0, 1]).join(","),
            "step,loss_total,loss_clean,loss_noise,loss_truth,err_total,err_clean,err_noise,\
             test_loss,test_err,resid_clean,resid_noise,ratio_0,alpha_0,cos_cn_0,eta_eff_0,\
             ratio_1,alpha_1,cos_cn_1,eta_eff_1"
        );
    }
}
