//! Losses, classification errors and residuals over the clean and noisy
//! subsets, from one forward pass.

use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::Result;
use crate::network::{loss_from_logits, predict, Head, NetworkState};

/// Mean residuals per subset: `|f − y|` for a sigmoid head, `‖f − y‖₂` for
/// softmax with one-hot `y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualStats {
    pub clean: Option<f64>,
    pub noise: Option<f64>,
    /// Softmax only: mean `|f_y − 1|` on the observed-label logit.
    pub positive_logit: Option<f64>,
}

/// Losses and errors over the whole set and its clean/noisy parts.
/// Errors count disagreement with the observed label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub loss_total: f64,
    pub loss_clean: Option<f64>,
    pub loss_noise: Option<f64>,
    /// Mean loss with every sample read with its ground-truth label.
    pub loss_truth: f64,
    pub err_total: f64,
    pub err_clean: Option<f64>,
    pub err_noise: Option<f64>,
    pub residuals: ResidualStats,
}

#[derive(Default)]
struct Acc {
    n: usize,
    loss: f64,
    err: usize,
    resid: f64,
}

impl Acc {
    fn mean(&self, v: f64) -> Option<f64> {
        (self.n > 0).then(|| v / self.n as f64)
    }
}

pub fn evaluate(state: &NetworkState, ds: &LabeledDataset) -> Result<Evaluation> {
    let head = state.config().head;
    let k = state.config().num_logits;
    let rows: Vec<usize> = (0..ds.len()).collect();
    let (mut clean, mut noise) = (Acc::default(), Acc::default());
    let mut truth_loss = 0.0;
    let mut positive = 0.0;
    let mut y = vec![0.0; k];
    let target = |y: &mut [f64], label: usize| match head {
        Head::Sigmoid => y[0] = label as f64,
        Head::Softmax => {
            y.iter_mut().for_each(|v| *v = 0.0);
            y[label] = 1.0;
        }
    };
    state.for_each_output(ds.features(), &rows, |row, logits, f| {
        let label = ds.labels()[row];
        target(&mut y, label);
        let loss = loss_from_logits(head, logits, &y);
        let resid = match head {
            Head::Sigmoid => (f[0] - y[0]).abs(),
            Head::Softmax => f.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt(),
        };
        if head == Head::Softmax {
            positive += (f[label] - 1.0).abs();
        }
        let acc = if ds.noise_mask()[row] { &mut noise } else { &mut clean };
        acc.n += 1;
        acc.loss += loss;
        acc.err += usize::from(predict(head, logits) != label);
        acc.resid += resid;
        target(&mut y, ds.truth()[row]);
        truth_loss += loss_from_logits(head, logits, &y);
    })?;
    let n = ds.len().max(1) as f64;
    Ok(Evaluation {
        loss_total: (clean.loss + noise.loss) / n,
        loss_clean: clean.mean(clean.loss),
        loss_noise: noise.mean(noise.loss),
        loss_truth: truth_loss / n,
        err_total: (clean.err + noise.err) as f64 / n,
        err_clean: clean.mean(clean.err as f64),
        err_noise: noise.mean(noise.err as f64),
        residuals: ResidualStats {
            clean: clean.mean(clean.resid),
            noise: noise.mean(noise.resid),
            positive_logit: (head == Head::Softmax).then(|| positive / n),
        },
    })
}

pub fn residual_stats(state: &NetworkState, ds: &LabeledDataset) -> Result<ResidualStats> {
    Ok(evaluate(state, ds)?.residuals)
}
