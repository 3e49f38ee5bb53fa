use super::*;
use crate::analysis::full_vs_truth_cosine;
use crate::data::{corrupt_labels, gen_two_clusters, subset_view, truth_relabeled, SubsetKind};
use crate::network::{init_ntk, Activation, NetworkConfig};
use crate::numcore::max_abs_diff;

fn clusters(n: usize, delta: f64, seed: u64) -> LabeledDataset {
    let mut rng = SeededRng::new(seed);
    let ds = gen_two_clusters(n, [2.0, 0.5], [-2.0, -0.5], 0.8, &mut rng).unwrap();
    corrupt_labels(&ds, delta, &mut rng).unwrap()
}

fn net(m: usize, seed: u64) -> NetworkState {
    let cfg = NetworkConfig::binary(2, vec![m], Activation::Relu).with_output_scale(0.01);
    init_ntk(cfg, &mut SeededRng::new(seed)).unwrap()
}

fn config(lr: f64, batch: usize, steps: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: lr,
        batch_size: batch,
        max_steps: steps,
        eval_every: 1,
        instrument_every: 1,
        seed: 3,
        loss: LossKind::Logistic,
    }
}

fn full(ds: &LabeledDataset) -> SubsetView<'_> {
    subset_view(ds, SubsetKind::Full, ClassConvention::default()).unwrap()
}

#[test]
fn zero_rate_leaves_state() {
    let ds = clusters(40, 0.2, 1);
    let mut state = net(16, 1);
    let before = state.clone();
    gd_step(&mut state, &full(&ds), 0.0).unwrap();
    assert_eq!(state, before);
}

#[test]
fn single_sample_step_descends() {
    let ds = clusters(40, 0.2, 2);
    let mut state = net(64, 2);
    let one = SubsetView::from_rows(&ds, vec![5]).unwrap();
    let y = state.config().target_for_class(ds.labels()[5]).unwrap();
    let before = state.loss(ds.features().row(5), &y).unwrap();
    gd_step(&mut state, &one, 100.0).unwrap();
    assert!(state.loss(ds.features().row(5), &y).unwrap() < before);
}

#[test]
fn clean_data_step_matches_truth_view() {
    let ds = clusters(60, 0.0, 3);
    let mut a = net(32, 3);
    let mut b = a.clone();
    gd_step(&mut a, &full(&ds), 50.0).unwrap();
    gd_step(&mut b, &truth_relabeled(&ds), 50.0).unwrap();
    assert_eq!(a.params(), b.params());
}

#[test]
fn full_size_batch_matches_gd() {
    let ds = clusters(60, 0.2, 4);
    let mut a = net(32, 4);
    let mut b = a.clone();
    gd_step(&mut a, &full(&ds), 50.0).unwrap();
    let steps = sgd_epoch(&mut b, &ds, ds.len(), 50.0, &mut SeededRng::new(1)).unwrap();
    assert_eq!(steps, 1);
    assert!(max_abs_diff(a.params(), b.params()) < 1e-12);
    assert!(sgd_epoch(&mut b, &ds, 0, 1.0, &mut SeededRng::new(1)).is_err());
}

#[test]
fn sgd_epoch_is_deterministic() {
    let ds = clusters(100, 0.2, 5);
    let mut a = net(16, 5);
    let mut b = a.clone();
    assert_eq!(sgd_epoch(&mut a, &ds, 32, 20.0, &mut SeededRng::new(9)).unwrap(), 4);
    sgd_epoch(&mut b, &ds, 32, 20.0, &mut SeededRng::new(9)).unwrap();
    assert_eq!(a.params(), b.params());
}

#[test]
fn zero_steps_gives_init_checkpoint() {
    let mut total = 0.0;
    for seed in 0..20 {
        let ds = clusters(100, 0.0, seed);
        let test = clusters(200, 0.0, seed + 100);
        let mut state = net(64, seed);
        let trace = run(&mut state, &ds, Some(&test), &config(1.0, 0, 0), &Instrumentation::default()).unwrap();
        assert_eq!(trace.checkpoints.len(), 1);
        assert_eq!(trace.checkpoints[0].step, 0);
        total += trace.checkpoints[0].test.unwrap().err;
    }
    let mean = total / 20.0;
    assert!((mean - 0.5).abs() < 0.2, "mean init error {mean}");
}

#[test]
fn clean_clusters_are_learned() {
    let ds = clusters(200, 0.0, 6);
    let test = clusters(400, 0.0, 7);
    let mut state = net(256, 6);
    let mut cfg = config(2000.0, 0, 200);
    cfg.eval_every = 50;
    let trace = run(&mut state, &ds, Some(&test), &cfg, &Instrumentation::default()).unwrap();
    let last = trace.checkpoints.last().unwrap();
    assert!(last.train.err_total < 0.02, "{:?}", last.train);
    assert!(last.test.unwrap().err < 0.05);
    assert!(last.train.loss_noise.is_none() && last.train.err_noise.is_none());
    assert!(last.dominance.iter().all(|r| r.degenerate));
    let steps: Vec<u64> = trace.checkpoints.iter().map(|c| c.step).collect();
    assert_eq!(steps, vec![0, 50, 100, 150, 200]);
}

#[test]
fn runs_are_reproducible_and_instrumentation_is_pure() {
    let ds = clusters(120, 0.3, 8);
    let mut cfg = config(500.0, 32, 30);
    cfg.eval_every = 5;
    let inst = Instrumentation { classes: vec![0, 1], ..Instrumentation::default() };
    let mut a = net(32, 8);
    let mut b = a.clone();
    let mut c = a.clone();
    let ta = run(&mut a, &ds, None, &cfg, &inst).unwrap();
    let tb = run(&mut b, &ds, None, &cfg, &inst).unwrap();
    assert_eq!(ta, tb);
    cfg.instrument_every = 1_000_000;
    let tc = run(&mut c, &ds, None, &cfg, &inst).unwrap();
    assert_eq!(a.params(), c.params());
    assert!(tc.checkpoints[1..].iter().all(|cp| !cp.instrumented()));
    assert!(tc.checkpoints[0].instrumented());
}

#[test]
fn decomposition_holds_along_training() {
    let ds = clusters(150, 0.3, 9);
    let mut state = net(64, 9);
    let mut cfg = config(500.0, 0, 10);
    cfg.eval_every = 2;
    let inst = Instrumentation { classes: vec![0, 1], decomposition_check: true, ..Instrumentation::default() };
    let trace = run(&mut state, &ds, None, &cfg, &inst).unwrap();
    for cp in &trace.checkpoints {
        assert!(cp.decomposition_error.unwrap() < 1e-9);
    }
}

#[test]
fn init_gradient_sees_truth() {
    for delta in [0.1, 0.3, 0.4] {
        let ds = clusters(400, delta, 10);
        let state = net(1024, 10);
        assert!(full_vs_truth_cosine(&state, &ds).unwrap().unwrap() > 0.9);
    }
}

#[test]
fn clean_priority_in_short_gd_run() {
    let ds = clusters(400, 0.3, 11);
    let mut state = net(1024, 11);
    let mut cfg = config(200.0, 0, 20);
    cfg.eval_every = 2;
    let trace = run(&mut state, &ds, None, &cfg, &Instrumentation::default()).unwrap();
    let clean: Vec<f64> = trace.checkpoints.iter().map(|c| c.train.loss_clean.unwrap()).collect();
    let noise: Vec<f64> = trace.checkpoints.iter().map(|c| c.train.loss_noise.unwrap()).collect();
    assert_eq!(Trend::of(&clean).unwrap().frac_decreasing(), 1.0, "{clean:?}");
    assert_eq!(Trend::of(&noise).unwrap().frac_increasing(), 1.0, "{noise:?}");
}

#[test]
fn config_validation() {
    let ds = clusters(20, 0.0, 1);
    let mut state = net(8, 1);
    let mut cfg = config(1.0, 0, 1);
    cfg.loss = LossKind::CrossEntropy;
    assert!(run(&mut state, &ds, None, &cfg, &Instrumentation::default()).is_err());
    let mut cfg = config(1.0, 0, 1);
    cfg.eval_every = 0;
    assert!(run(&mut state, &ds, None, &cfg, &Instrumentation::default()).is_err());
    let inst = Instrumentation { classes: vec![2], ..Instrumentation::default() };
    assert!(run(&mut state, &ds, None, &config(1.0, 0, 1), &inst).is_err());
}

#[test]
fn divergence_leaves_partial_trace() {
    let ds = clusters(20, 0.0, 1);
    let mut state = net(8, 1);
    let trace = run(&mut state, &ds, None, &config(1e308, 0, 5), &Instrumentation::default()).unwrap();
    assert!(trace.error.is_some());
    assert!(!trace.checkpoints.is_empty());
}

#[test]
fn early_stop_on_trace() {
    let ds = clusters(100, 0.3, 12);
    let test = clusters(100, 0.0, 13);
    let mut state = net(64, 12);
    let mut cfg = config(300.0, 0, 12);
    cfg.eval_every = 2;
    let trace = run(&mut state, &ds, Some(&test), &cfg, &Instrumentation::default()).unwrap();
    let stop = detect_early_stop(&trace).unwrap();
    assert!(stop.stop_step <= trace.checkpoints.last().unwrap().step);
    assert!(stop.min_test_err <= stop.stop_test_err);
    let report = stage_report(&trace, &stop).unwrap();
    assert_eq!(report.early.from_step, 0);
    assert_eq!(report.early.to_step, stop.stop_step);
    let none = run(&mut state, &ds, None, &cfg, &Instrumentation::default()).unwrap();
    assert!(detect_early_stop(&none).is_err());
}
