//! Gradient-descent and mini-batch SGD loops with checkpointed measurements.

mod stages;
mod sweep;

use serde::{Deserialize, Serialize};

pub use stages::{detect_early_stop, stage_report, EarlyStopReport, StageReport, StageSummary, Trend};
pub use sweep::sweep;

use crate::analysis::{decomposition_error, dominance_records, evaluate, DominanceRecord, Evaluation, GradientMode};
use crate::data::{ClassConvention, LabeledDataset, SubsetView};
use crate::error::{Error, Result};
use crate::network::{Head, NetworkState};
use crate::numcore::SeededRng;

/// Stream of the run seed that drives mini-batch shuffling.
const SHUFFLE_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Logistic,
    CrossEntropy,
}

impl LossKind {
    pub fn for_head(head: Head) -> Self {
        match head {
            Head::Sigmoid => LossKind::Logistic,
            Head::Softmax => LossKind::CrossEntropy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// 0 means full batch.
    pub batch_size: usize,
    pub max_steps: u64,
    pub eval_every: u64,
    pub instrument_every: u64,
    pub seed: u64,
    pub loss: LossKind,
}

impl TrainConfig {
    pub fn validate(&self, head: Head) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::invalid("learning_rate must be finite and nonnegative"));
        }
        if self.eval_every == 0 || self.instrument_every == 0 {
            return Err(Error::invalid("eval_every and instrument_every must be at least 1"));
        }
        if self.loss != LossKind::for_head(head) {
            return Err(Error::invalid(format!("{:?} loss does not match a {head:?} head", self.loss)));
        }
        Ok(())
    }
}

/// What to measure at instrumented checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instrumentation {
    pub classes: Vec<usize>,
    pub mode: GradientMode,
    pub convention: ClassConvention,
    /// Also check `Σ_c (g_clean + g_noise) = n·∇L` at each instrumented step.
    pub decomposition_check: bool,
}

impl Default for Instrumentation {
    fn default() -> Self {
        Self {
            classes: vec![0],
            mode: GradientMode::Full,
            convention: ClassConvention::GroundTruth,
            decomposition_check: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestMetrics {
    pub loss: f64,
    pub err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub step: u64,
    pub train: Evaluation,
    pub test: Option<TestMetrics>,
    /// Empty unless the checkpoint was instrumented.
    pub dominance: Vec<DominanceRecord>,
    pub decomposition_error: Option<f64>,
    pub param_norm: f64,
}

impl Checkpoint {
    pub fn instrumented(&self) -> bool {
        !self.dominance.is_empty()
    }

    /// Mean dominance ratio over the tracked classes, if all are defined.
    pub fn mean_ratio(&self) -> Option<f64> {
        if self.dominance.is_empty() {
            return None;
        }
        let mut total = 0.0;
        for r in &self.dominance {
            total += r.ratio?;
        }
        Some(total / self.dominance.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsTrace {
    pub checkpoints: Vec<Checkpoint>,
    pub tracked_classes: Vec<usize>,
    pub noise_level: f64,
    pub learning_rate: f64,
    /// Set when training stopped early on an error; checkpoints up to that
    /// point are kept.
    pub error: Option<String>,
}

fn descend(
    state: &mut NetworkState,
    ds: &LabeledDataset,
    rows: &[usize],
    labels: &[usize],
    lr: f64,
    step: u64,
) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::EmptySubset("training batch".into()));
    }
    let head = state.config().head;
    let grad = state.accumulate_gradient(ds.features(), rows, |row, f, u| {
        crate::analysis::fill_cotangent(head, GradientMode::Full, 0, labels[row], f, u)
    })?;
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient { step });
    }
    state.apply_update(&grad, lr / rows.len() as f64)
}

/// One full-batch update `w ← w − η∇L(w; view)`.
pub fn gd_step(state: &mut NetworkState, view: &SubsetView<'_>, lr: f64) -> Result<()> {
    let ds = view.dataset();
    let labels: Vec<usize> = (0..ds.len()).map(|row| view.label_of(row)).collect();
    descend(state, ds, view.indices(), &labels, lr, 0)
}

/// One pass over a fresh shuffle of the dataset in mini-batches; returns
/// the number of updates made.
pub fn sgd_epoch(
    state: &mut NetworkState,
    ds: &LabeledDataset,
    batch_size: usize,
    lr: f64,
    rng: &mut SeededRng,
) -> Result<usize> {
    if batch_size == 0 {
        return Err(Error::invalid("batch_size must be at least 1"));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    rng.shuffle(&mut order);
    let mut steps = 0;
    for batch in order.chunks(batch_size) {
        descend(state, ds, batch, ds.labels(), lr, steps as u64)?;
        steps += 1;
    }
    Ok(steps)
}

/// Called after every checkpoint with the parameters it was taken at.
pub type Observer<'a> = dyn FnMut(&Checkpoint, &NetworkState) -> Result<()> + 'a;

pub fn run(
    state: &mut NetworkState,
    train: &LabeledDataset,
    test: Option<&LabeledDataset>,
    config: &TrainConfig,
    instrumentation: &Instrumentation,
) -> Result<DynamicsTrace> {
    run_with_observer(state, train, test, config, instrumentation, &mut |_, _| Ok(()))
}

/// Trains for `config.max_steps` updates, checkpointing at step 0, every
/// `eval_every` steps and at the last step. Instrumentation only reads the
/// parameters and never touches the shuffling stream.
pub fn run_with_observer(
    state: &mut NetworkState,
    train: &LabeledDataset,
    test: Option<&LabeledDataset>,
    config: &TrainConfig,
    instrumentation: &Instrumentation,
    observer: &mut Observer<'_>,
) -> Result<DynamicsTrace> {
    config.validate(state.config().head)?;
    if train.is_empty() {
        return Err(Error::EmptySubset("training set".into()));
    }
    if let Some(&bad) = instrumentation.classes.iter().find(|&&c| c >= train.num_classes()) {
        return Err(Error::invalid(format!("tracked class {bad} out of range")));
    }
    let mut trace = DynamicsTrace {
        checkpoints: Vec::new(),
        tracked_classes: instrumentation.classes.clone(),
        noise_level: train.noise_level(),
        learning_rate: config.learning_rate,
        error: None,
    };
    let mut rng = SeededRng::new(config.seed).derive(SHUFFLE_STREAM);
    let full_batch = config.batch_size == 0 || config.batch_size >= train.len();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut cursor = train.len();

    let mut take_checkpoint = |state: &NetworkState, step: u64, trace: &mut DynamicsTrace| -> Result<()> {
        let cp = checkpoint(state, train, test, config, instrumentation, step)?;
        observer(&cp, state)?;
        trace.checkpoints.push(cp);
        Ok(())
    };
    take_checkpoint(state, 0, &mut trace)?;
    for step in 1..=config.max_steps {
        let result = if full_batch {
            descend(state, train, &order, train.labels(), config.learning_rate, step)
        } else {
            if cursor >= order.len() {
                rng.shuffle(&mut order);
                cursor = 0;
            }
            let end = (cursor + config.batch_size).min(order.len());
            let r = descend(state, train, &order[cursor..end], train.labels(), config.learning_rate, step);
            cursor = end;
            r
        };
        if let Err(e) = result {
            trace.error = Some(e.to_string());
            return Ok(trace);
        }
        if step % config.eval_every == 0 || step == config.max_steps {
            take_checkpoint(state, step, &mut trace)?;
        }
    }
    Ok(trace)
}

fn checkpoint(
    state: &NetworkState,
    train: &LabeledDataset,
    test: Option<&LabeledDataset>,
    config: &TrainConfig,
    instrumentation: &Instrumentation,
    step: u64,
) -> Result<Checkpoint> {
    let test = test
        .map(|t| evaluate(state, t).map(|e| TestMetrics { loss: e.loss_total, err: e.err_total }))
        .transpose()?;
    let instrument = step % config.instrument_every == 0 && !instrumentation.classes.is_empty();
    let (dominance, decomposition) = if instrument {
        let records = dominance_records(
            state,
            train,
            &instrumentation.classes,
            instrumentation.mode,
            instrumentation.convention,
            config.learning_rate,
            step,
        )?;
        let decomposition = if instrumentation.decomposition_check {
            Some(decomposition_error(state, train, instrumentation.convention)?)
        } else {
            None
        };
        (records, decomposition)
    } else {
        (Vec::new(), None)
    };
    Ok(Checkpoint {
        step,
        train: evaluate(state, train)?,
        test,
        dominance,
        decomposition_error: decomposition,
        param_norm: state.param_norm(),
    })
}

#[cfg(test)]
mod tests;
