//! Bias-free fully connected networks under the NTK parameterization.
//!
//! Layer `k` computes `z_k = s_k · W_k a_{k-1}` with `a_{-1} = x`. The first
//! layer is unscaled, every later layer carries `1/√(fan-in)`, and the output
//! layer is additionally multiplied by `output_scale`. For bias-free ReLU or
//! linear nets that multiplier is equivalent to rescaling the inputs, and it
//! is how experiment presets keep the initial logits near zero. Parameters are
//! stored layer by layer, each weight matrix row-major (`out × in`).
//!
//! Backpropagation is written by hand. The head (sigmoid or softmax) is fused
//! with its loss, so every sample gradient is `Σ_c (f_c − y_c)·∇h_c`.

mod batch;
mod factors;

use serde::{Deserialize, Serialize};

pub use batch::BatchForward;
pub use factors::DerivativeFactors;

use crate::data::SubsetView;
use crate::error::{Error, Result};
use crate::numcore::{self, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Linear,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Linear => z,
            Activation::Relu => z.max(0.0),
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    /// One logit, logistic loss.
    Sigmoid,
    /// `C` logits, cross-entropy loss.
    Softmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub activation: Activation,
    pub head: Head,
    pub num_logits: usize,
    pub output_scale: f64,
}

impl NetworkConfig {
    pub fn binary(input_dim: usize, hidden_widths: Vec<usize>, activation: Activation) -> Self {
        Self {
            input_dim,
            hidden_widths,
            activation,
            head: Head::Sigmoid,
            num_logits: 1,
            output_scale: 1.0,
        }
    }

    pub fn multiclass(
        input_dim: usize,
        hidden_widths: Vec<usize>,
        activation: Activation,
        classes: usize,
    ) -> Self {
        Self {
            input_dim,
            hidden_widths,
            activation,
            head: Head::Softmax,
            num_logits: classes,
            output_scale: 1.0,
        }
    }

    pub fn with_output_scale(mut self, scale: f64) -> Self {
        self.output_scale = scale;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::invalid("input_dim must be positive"));
        }
        if self.hidden_widths.is_empty() {
            return Err(Error::invalid("at least one hidden layer is required"));
        }
        if self.hidden_widths.contains(&0) {
            return Err(Error::invalid("hidden widths must be positive"));
        }
        match self.head {
            Head::Sigmoid if self.num_logits != 1 => {
                return Err(Error::invalid("sigmoid head needs exactly one logit"))
            }
            Head::Softmax if self.num_logits < 2 => {
                return Err(Error::invalid("softmax head needs at least two logits"))
            }
            _ => {}
        }
        if !(self.output_scale.is_finite() && self.output_scale > 0.0) {
            return Err(Error::invalid("output_scale must be positive and finite"));
        }
        Ok(())
    }

    /// Number of classes the head distinguishes (2 for a sigmoid head).
    pub fn num_classes(&self) -> usize {
        match self.head {
            Head::Sigmoid => 2,
            Head::Softmax => self.num_logits,
        }
    }

    /// `(out, in)` for each weight matrix, input layer first.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.hidden_widths.len() + 1);
        let mut fan_in = self.input_dim;
        for &w in &self.hidden_widths {
            shapes.push((w, fan_in));
            fan_in = w;
        }
        shapes.push((self.num_logits, fan_in));
        shapes
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|(o, i)| o * i).sum()
    }

    /// Forward multiplier of each layer.
    pub fn layer_scales(&self) -> Vec<f64> {
        let shapes = self.layer_shapes();
        let last = shapes.len() - 1;
        shapes
            .iter()
            .enumerate()
            .map(|(k, &(_, fan_in))| {
                let base = if k == 0 { 1.0 } else { 1.0 / (fan_in as f64).sqrt() };
                if k == last {
                    base * self.output_scale
                } else {
                    base
                }
            })
            .collect()
    }

    /// Encodes a class index as the target vector the loss expects.
    pub fn target_for_class(&self, class: usize) -> Result<Vec<f64>> {
        match self.head {
            Head::Sigmoid if class < 2 => Ok(vec![class as f64]),
            Head::Softmax if class < self.num_logits => {
                let mut y = vec![0.0; self.num_logits];
                y[class] = 1.0;
                Ok(y)
            }
            _ => Err(Error::InvalidLabel(format!(
                "class {class} out of range for {} classes",
                self.num_classes()
            ))),
        }
    }

    fn check_target(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.num_logits {
            return Err(Error::InvalidLabel(format!(
                "target has {} entries, network has {} logits",
                y.len(),
                self.num_logits
            )));
        }
        if y.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidLabel("targets must be 0/1".into()));
        }
        if self.head == Head::Softmax && y.iter().filter(|&&v| v == 1.0).count() != 1 {
            return Err(Error::InvalidLabel("softmax target must be one-hot".into()));
        }
        Ok(())
    }
}

/// Parameters plus the layer layout they are indexed by.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    config: NetworkConfig,
    params: Vec<f64>,
    offsets: Vec<usize>,
    shapes: Vec<(usize, usize)>,
    scales: Vec<f64>,
}

/// Activations cached by a single forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardRecord {
    pub pre_activations: Vec<Vec<f64>>,
    pub post_activations: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
    pub outputs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleGradient {
    pub grad: Vec<f64>,
    /// `f − y` per logit; a single entry for binary and single-logit gradients.
    pub residual_factor: Vec<f64>,
    pub sample_id: usize,
}

/// Draws every weight i.i.d. from N(0, 1), layer by layer.
pub fn init_ntk(config: NetworkConfig, rng: &mut SeededRng) -> Result<NetworkState> {
    config.validate()?;
    let params = (0..config.param_count()).map(|_| rng.gaussian()).collect();
    NetworkState::from_params(config, params)
}

pub(crate) fn sigmoid(h: f64) -> f64 {
    if h >= 0.0 {
        1.0 / (1.0 + (-h).exp())
    } else {
        let e = h.exp();
        e / (1.0 + e)
    }
}

/// Applies the head to a logit vector in place.
pub(crate) fn apply_head(head: Head, logits: &[f64], out: &mut [f64]) {
    match head {
        Head::Sigmoid => out[0] = sigmoid(logits[0]),
        Head::Softmax => {
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for (o, &h) in out.iter_mut().zip(logits) {
                *o = (h - max).exp();
                total += *o;
            }
            out.iter_mut().for_each(|o| *o /= total);
        }
    }
}

/// Loss from logits, computed without forming probabilities.
pub(crate) fn loss_from_logits(head: Head, logits: &[f64], y: &[f64]) -> f64 {
    match head {
        Head::Sigmoid => {
            let h = logits[0];
            let softplus = h.max(0.0) + (-h.abs()).exp().ln_1p();
            softplus - y[0] * h
        }
        Head::Softmax => {
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + logits.iter().map(|h| (h - max).exp()).sum::<f64>().ln();
            lse - numcore::dot(y, logits)
        }
    }
}

/// Predicted class; sigmoid thresholds at 0.5, softmax takes the first argmax.
pub(crate) fn predict(head: Head, logits: &[f64]) -> usize {
    match head {
        Head::Sigmoid => usize::from(logits[0] > 0.0),
        Head::Softmax => {
            let mut best = 0;
            for (c, &h) in logits.iter().enumerate() {
                if h > logits[best] {
                    best = c;
                }
            }
            best
        }
    }
}

impl NetworkState {
    pub fn from_params(config: NetworkConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let shapes = config.layer_shapes();
        let expected = config.param_count();
        if params.len() != expected {
            return Err(Error::DimensionMismatch {
                context: "NetworkState::from_params",
                expected,
                got: params.len(),
            });
        }
        let mut offsets = Vec::with_capacity(shapes.len() + 1);
        let mut acc = 0;
        for (o, i) in &shapes {
            offsets.push(acc);
            acc += o * i;
        }
        offsets.push(acc);
        let scales = config.layer_scales();
        Ok(Self {
            config,
            params,
            offsets,
            shapes,
            scales,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Offset of each layer block inside the flat parameter vector; the last
    /// entry is the total length.
    pub fn layer_offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn num_layers(&self) -> usize {
        self.shapes.len()
    }

    pub(crate) fn layer(&self, k: usize) -> &[f64] {
        &self.params[self.offsets[k]..self.offsets[k + 1]]
    }

    pub(crate) fn shape(&self, k: usize) -> (usize, usize) {
        self.shapes[k]
    }

    pub(crate) fn scale(&self, k: usize) -> f64 {
        self.scales[k]
    }

    /// `w ← w − lr·g`
    pub fn apply_update(&mut self, grad: &[f64], lr: f64) -> Result<()> {
        if grad.len() != self.params.len() {
            return Err(Error::DimensionMismatch {
                context: "apply_update",
                expected: self.params.len(),
                got: grad.len(),
            });
        }
        numcore::axpy(-lr, grad, &mut self.params);
        Ok(())
    }

    pub fn param_norm(&self) -> f64 {
        numcore::norm(&self.params)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.config.input_dim {
            return Err(Error::DimensionMismatch {
                context: "network input",
                expected: self.config.input_dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<ForwardRecord> {
        self.check_input(x)?;
        let act = self.config.activation;
        let last = self.num_layers() - 1;
        let mut pre_activations = Vec::with_capacity(last);
        let mut post_activations = Vec::with_capacity(last);
        let mut input: Vec<f64> = x.to_vec();
        let mut logits = Vec::new();
        for k in 0..=last {
            let (out, fan_in) = self.shapes[k];
            let w = self.layer(k);
            let s = self.scales[k];
            let z: Vec<f64> = (0..out)
                .map(|r| s * numcore::dot(&w[r * fan_in..(r + 1) * fan_in], &input))
                .collect();
            if k == last {
                logits = z;
            } else {
                let a: Vec<f64> = z.iter().map(|&v| act.apply(v)).collect();
                pre_activations.push(z);
                post_activations.push(a.clone());
                input = a;
            }
        }
        let mut outputs = vec![0.0; logits.len()];
        apply_head(self.config.head, &logits, &mut outputs);
        Ok(ForwardRecord {
            pre_activations,
            post_activations,
            logits,
            outputs,
        })
    }

    /// `Σ_c u_c ∇h_c(x)` for a cotangent `u` on the logits.
    fn backward(&self, x: &[f64], rec: &ForwardRecord, u: &[f64]) -> Vec<f64> {
        let act = self.config.activation;
        let mut grad = vec![0.0; self.params.len()];
        let mut g = u.to_vec();
        for k in (0..self.num_layers()).rev() {
            let (out, fan_in) = self.shapes[k];
            let s = self.scales[k];
            let input = if k == 0 { x } else { &rec.post_activations[k - 1][..] };
            let block = &mut grad[self.offsets[k]..self.offsets[k + 1]];
            for r in 0..out {
                if g[r] != 0.0 {
                    numcore::axpy(s * g[r], input, &mut block[r * fan_in..(r + 1) * fan_in]);
                }
            }
            if k > 0 {
                let w = self.layer(k);
                let mut prev = vec![0.0; fan_in];
                for r in 0..out {
                    if g[r] != 0.0 {
                        numcore::axpy(s * g[r], &w[r * fan_in..(r + 1) * fan_in], &mut prev);
                    }
                }
                for (p, &z) in prev.iter_mut().zip(&rec.pre_activations[k - 1]) {
                    *p *= act.derivative(z);
                }
                g = prev;
            }
        }
        grad
    }

    fn check_logit(&self, c: usize) -> Result<()> {
        if c >= self.config.num_logits {
            return Err(Error::invalid(format!(
                "logit {c} out of range for {} logits",
                self.config.num_logits
            )));
        }
        Ok(())
    }

    /// Gradient of the pre-activation logit `h_c` with respect to all parameters.
    pub fn model_derivative(&self, x: &[f64], c: usize) -> Result<Vec<f64>> {
        self.check_logit(c)?;
        let rec = self.forward(x)?;
        let mut u = vec![0.0; self.config.num_logits];
        u[c] = 1.0;
        Ok(self.backward(x, &rec, &u))
    }

    pub fn loss(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.config.check_target(y)?;
        let rec = self.forward(x)?;
        Ok(loss_from_logits(self.config.head, &rec.logits, y))
    }

    /// `∇l = Σ_c (f_c − y_c) ∇h_c`.
    pub fn per_sample_gradient(
        &self,
        x: &[f64],
        y: &[f64],
        sample_id: usize,
    ) -> Result<SampleGradient> {
        self.config.check_target(y)?;
        let rec = self.forward(x)?;
        let residual: Vec<f64> = rec.outputs.iter().zip(y).map(|(f, t)| f - t).collect();
        let grad = self.backward(x, &rec, &residual);
        Ok(SampleGradient {
            grad,
            residual_factor: residual,
            sample_id,
        })
    }

    /// `(f_c − y_c) ∇h_c`, materialized over the full parameter vector.
    pub fn single_logit_gradient(
        &self,
        x: &[f64],
        y: &[f64],
        c: usize,
        sample_id: usize,
    ) -> Result<SampleGradient> {
        if self.config.head != Head::Softmax {
            return Err(Error::Unsupported(
                "single-logit gradients need a softmax head".into(),
            ));
        }
        self.check_logit(c)?;
        self.config.check_target(y)?;
        let rec = self.forward(x)?;
        let r = rec.outputs[c] - y[c];
        let mut u = vec![0.0; self.config.num_logits];
        u[c] = r;
        Ok(SampleGradient {
            grad: self.backward(x, &rec, &u),
            residual_factor: vec![r],
            sample_id,
        })
    }
}

/// Mean of the per-sample gradients over a view, summed as a balanced tree
/// in view order. This is the reference path; training uses the batched
/// engine.
pub fn mean_gradient(state: &NetworkState, view: &SubsetView<'_>) -> Result<Vec<f64>> {
    if view.is_empty() {
        return Err(Error::EmptySubset(format!("{:?}", view.kind())));
    }
    let cfg = state.config();
    let mut failure = None;
    let mut sum = numcore::tree_sum(view.len(), state.param_count(), &mut |pos| {
        let idx = view.indices()[pos];
        let result = cfg
            .target_for_class(view.label_at(pos))
            .and_then(|y| state.per_sample_gradient(view.dataset().features().row(idx), &y, idx));
        match result {
            Ok(g) => g.grad,
            Err(e) => {
                failure.get_or_insert(e);
                vec![0.0; state.param_count()]
            }
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    numcore::scale(&mut sum, 1.0 / view.len() as f64);
    Ok(sum)
}
