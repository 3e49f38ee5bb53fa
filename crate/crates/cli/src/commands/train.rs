use std::path::Path;

use cleanprio_core::data::{write_params, ParamSnapshot};
use cleanprio_core::trainer::{
    detect_early_stop, run_with_observer, stage_report, DynamicsTrace, EarlyStopReport, StageReport,
};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::output::{trace_csv, write_atomic, write_json};
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainOutcome {
    pub trace: DynamicsTrace,
    /// Absent when the trace has fewer than three checkpoints.
    pub stop: Option<EarlyStopReport>,
    pub stages: Option<StageReport>,
}

/// Trains per `cfg` and writes `trace.csv`, `early_stop.json`,
/// `stage_report.json` and any parameter snapshots under `out`.
///
/// A run that aborts on a non-finite gradient still writes its partial
/// trace; the error is recorded in the returned trace.
pub fn train(cfg: &ExperimentConfig, out: &Path) -> Result<TrainOutcome, CliError> {
    cfg.validate()?;
    let data = cfg.prepare()?;
    let mut state = cfg.init_network(&data)?;
    let every = cfg.train.snapshot_every;
    let snap_dir = out.join("snapshots");
    let mut observer = |cp: &cleanprio_core::trainer::Checkpoint, state: &cleanprio_core::NetworkState| {
        if every > 0 && cp.step % every == 0 {
            write_params(&ParamSnapshot::of(state, cp.step), snap_dir.join(format!("params_{:08}.cpnp", cp.step)))?;
        }
        Ok(())
    };
    if every > 0 {
        std::fs::create_dir_all(&snap_dir).map_err(|e| CliError::Io(format!("{}: {e}", snap_dir.display())))?;
    }
    let trace = run_with_observer(
        &mut state,
        &data.train,
        Some(&data.test),
        &cfg.train_config(),
        &cfg.instrumentation(),
        &mut observer,
    )?;
    write_atomic(&out.join("trace.csv"), trace_csv(&trace).as_bytes())?;
    let (stop, stages) = if trace.checkpoints.len() >= 3 {
        let stop = detect_early_stop(&trace)?;
        let stages = stage_report(&trace, &stop)?;
        write_json(&out.join("early_stop.json"), &stop)?;
        write_json(&out.join("stage_report.json"), &stages)?;
        (Some(stop), Some(stages))
    } else {
        eprintln!("note: fewer than three checkpoints, early-stop detection skipped");
        (None, None)
    };
    Ok(TrainOutcome { trace, stop, stages })
}
