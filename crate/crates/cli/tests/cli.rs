use std::path::Path;

use cleanprio_cli::config::DatasetSpec;
use cleanprio_cli::output::{SWEEP_RESULT_COLUMNS, TRACE_COLUMNS};
use cleanprio_cli::{analyze_init, run_cli, run_sweep, train, ExperimentConfig};
use cleanprio_core::analysis::HistogramKind;

fn cli(args: &[&str]) -> i32 {
    run_cli(std::iter::once("cleanprio").chain(args.iter().copied()))
}

fn small_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::preset("synthetic-binary").unwrap();
    if let DatasetSpec::Synthetic(s) = &mut cfg.dataset {
        s.n_train = 200;
        s.n_test = 200;
    }
    cfg.network.hidden = vec![64];
    cfg.train.max_steps = 30;
    cfg
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = path_str(dir.path());
    assert_eq!(cli(&["verify-theory", "--grid", "0", "--out", out]), 2);
    assert_eq!(cli(&["train", "--preset", "no-such-preset", "--out", out]), 2);
    assert_eq!(cli(&["train", "--config", "/nonexistent/cfg.toml", "--out", out]), 3);
    assert_eq!(cli(&["bogus-command"]), 2);
    assert_eq!(cli(&["train"]), 2);
    let small = ["--width", "8", "--trials", "1", "--grid", "3", "--pairs", "50", "--wishart-width", "20"];
    let mut gated = vec!["verify-theory"];
    gated.extend(small);
    gated.extend(["--out", out]);
    assert_eq!(cli(&gated), 1);
    gated.push("--no-gate");
    assert_eq!(cli(&gated), 0);
    assert!(dir.path().join("angle_curve.csv").exists());
    assert!(dir.path().join("theory_summary.json").exists());
}

#[test]
fn emitted_defaults_load_back() {
    for name in cleanprio_cli::config::PRESETS {
        let cfg = ExperimentConfig::preset(name).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.toml");
        std::fs::write(&path, cfg.to_toml()).unwrap();
        assert_eq!(ExperimentConfig::load(&path).unwrap(), cfg);
    }
}

#[test]
fn train_outputs_are_reproducible() {
    let cfg = small_config();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = train(&cfg, a.path()).unwrap();
    train(&cfg, b.path()).unwrap();
    for file in ["trace.csv", "early_stop.json", "stage_report.json"] {
        let x = std::fs::read(a.path().join(file)).unwrap();
        let y = std::fs::read(b.path().join(file)).unwrap();
        assert_eq!(x, y, "{file} differs between identical runs");
    }
    let trace = std::fs::read_to_string(a.path().join("trace.csv")).unwrap();
    let header: Vec<&str> = trace.lines().next().unwrap().split(',').collect();
    assert_eq!(&header[..TRACE_COLUMNS.len()], &TRACE_COLUMNS[..]);
    assert!(header[TRACE_COLUMNS.len()..].iter().any(|c| c.starts_with("ratio_")));
    assert_eq!(trace.lines().count(), first.trace.checkpoints.len() + 1);
}

#[test]
fn snapshots_follow_cadence() {
    let mut cfg = small_config();
    cfg.train.snapshot_every = 10;
    let dir = tempfile::tempdir().unwrap();
    train(&cfg, dir.path()).unwrap();
    let mut names: Vec<String> = std::fs::read_dir(dir.path().join("snapshots"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["params_00000000.cpnp", "params_00000010.cpnp", "params_00000020.cpnp", "params_00000030.cpnp"]);
}

#[test]
fn sweep_requires_an_axis_and_writes_table() {
    let mut cfg = small_config();
    cfg.sweep = Default::default();
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run_sweep(&cfg, 1, dir.path()).unwrap_err().exit_code(), 2);

    cfg.sweep.noise_levels = vec![0.1, 0.3];
    let rows = run_sweep(&cfg, 2, dir.path()).unwrap();
    assert_eq!(rows.len(), 2);
    let table = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let mut header = vec!["noise_level"];
    header.extend(SWEEP_RESULT_COLUMNS);
    assert_eq!(table.lines().next().unwrap(), header.join(","));
    assert_eq!(table.lines().count(), 3);
    assert!(dir.path().join("runs/001/trace.csv").exists());
}

#[test]
fn clean_data_has_no_noise_histograms() {
    let mut cfg = small_config();
    cfg.noise_level = 0.0;
    let dir = tempfile::tempdir().unwrap();
    let summary = analyze_init(&cfg, dir.path()).unwrap();
    assert!(summary.expected_ratio.is_none());
    assert!(summary.classes.iter().all(|c| c.ratio.is_none() && c.n_noise == 0));
    assert!(summary.histograms.iter().all(|h| h.kind != HistogramKind::NoiseVsRef));
    assert!(summary.histograms.iter().any(|h| h.kind == HistogramKind::CleanVsRef));
    assert!(dir.path().join("theta_hist.csv").exists());
}

#[test]
fn out_flag_beats_config_dir() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg.output_dir = "/nonexistent/should-not-be-used".into();
    let path = dir.path().join("cfg.toml");
    std::fs::write(&path, cfg.to_toml()).unwrap();
    let out = dir.path().join("run");
    assert_eq!(cli(&["analyze-init", "--config", path_str(&path), "--out", path_str(&out)]), 0);
    assert!(out.join("init_summary.json").exists());
}
