//! Batched forward/backward passes built on GEMM.
//!
//! Sums over samples come out of the GEMM inner loop, so for a fixed row
//! list and chunk size the accumulation order is fixed and results are
//! reproducible bit for bit.

use super::{apply_head, NetworkState};
use crate::error::{Error, Result};
use crate::numcore::{gemm, Matrix};

/// Rows processed per GEMM call when streaming over a dataset.
pub const CHUNK_ROWS: usize = 256;

#[derive(Debug, Clone)]
pub struct BatchForward {
    input: Matrix,
    pre: Vec<Matrix>,
    post: Vec<Matrix>,
    logits: Matrix,
    outputs: Matrix,
}

impl BatchForward {
    pub fn len(&self) -> usize {
        self.input.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn logits(&self) -> &Matrix {
        &self.logits
    }

    pub fn outputs(&self) -> &Matrix {
        &self.outputs
    }

    pub(crate) fn layer_input(&self, k: usize) -> &Matrix {
        if k == 0 {
            &self.input
        } else {
            &self.post[k - 1]
        }
    }
}

impl NetworkState {
    pub fn forward_batch(&self, input: Matrix) -> Result<BatchForward> {
        if input.cols() != self.config.input_dim {
            return Err(Error::DimensionMismatch {
                context: "forward_batch",
                expected: self.config.input_dim,
                got: input.cols(),
            });
        }
        let b = input.rows();
        let act = self.config.activation;
        let last = self.num_layers() - 1;
        let mut pre = Vec::with_capacity(last);
        let mut post: Vec<Matrix> = Vec::with_capacity(last);
        let mut logits = Matrix::zeros(b, self.config.num_logits);
        for k in 0..=last {
            let (out, fan_in) = self.shape(k);
            let w = self.layer(k);
            let a = if k == 0 { &input } else { &post[k - 1] };
            let mut z = Matrix::zeros(b, out);
            gemm(
                b,
                fan_in,
                out,
                self.scale(k),
                (a.data(), fan_in, 1),
                (w, 1, fan_in),
                0.0,
                (z.data_mut(), out, 1),
            );
            if k == last {
                logits = z;
            } else {
                let mut h = z.clone();
                h.data_mut().iter_mut().for_each(|v| *v = act.apply(*v));
                pre.push(z);
                post.push(h);
            }
        }
        let mut outputs = Matrix::zeros(b, self.config.num_logits);
        for r in 0..b {
            apply_head(self.config.head, logits.row(r), outputs.row_mut(r));
        }
        Ok(BatchForward {
            input,
            pre,
            post,
            logits,
            outputs,
        })
    }

    /// Cotangents at every layer's pre-activation, input layer first, for
    /// the logit cotangent `cot` (`b × num_logits`).
    pub(crate) fn layer_deltas(&self, fwd: &BatchForward, cot: Matrix) -> Vec<Matrix> {
        let b = fwd.len();
        let act = self.config.activation;
        let layers = self.num_layers();
        let mut deltas = vec![Matrix::zeros(0, 0); layers];
        let mut g = cot;
        for k in (0..layers).rev() {
            let (out, fan_in) = self.shape(k);
            if k > 0 {
                let mut prev = Matrix::zeros(b, fan_in);
                gemm(
                    b,
                    out,
                    fan_in,
                    self.scale(k),
                    (g.data(), out, 1),
                    (self.layer(k), fan_in, 1),
                    0.0,
                    (prev.data_mut(), fan_in, 1),
                );
                for (p, &z) in prev.data_mut().iter_mut().zip(fwd.pre[k - 1].data()) {
                    *p *= act.derivative(z);
                }
                deltas[k] = std::mem::replace(&mut g, prev);
            } else {
                deltas[0] = std::mem::replace(&mut g, Matrix::zeros(0, 0));
            }
        }
        deltas
    }

    /// Adds `Σ_i Σ_c cot[i][c] ∇h_c(x_i)` into `grad`.
    pub fn backward_batch(&self, fwd: &BatchForward, cot: Matrix, grad: &mut [f64]) -> Result<()> {
        if cot.rows() != fwd.len() || cot.cols() != self.config.num_logits {
            return Err(Error::DimensionMismatch {
                context: "backward_batch cotangent",
                expected: fwd.len() * self.config.num_logits,
                got: cot.rows() * cot.cols(),
            });
        }
        if grad.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                context: "backward_batch gradient",
                expected: self.param_count(),
                got: grad.len(),
            });
        }
        let b = fwd.len();
        let deltas = self.layer_deltas(fwd, cot);
        for (k, g) in deltas.iter().enumerate() {
            let (out, fan_in) = self.shape(k);
            let a = fwd.layer_input(k);
            let block = &mut grad[self.offsets[k]..self.offsets[k + 1]];
            gemm(
                out,
                b,
                fan_in,
                self.scale(k),
                (g.data(), 1, out),
                (a.data(), fan_in, 1),
                1.0,
                (block, fan_in, 1),
            );
        }
        Ok(())
    }

    /// Streams `rows` of `features` through the network in fixed chunks and
    /// returns `Σ_i Σ_c u_ic ∇h_c(x_i)`, where `cot(row, outputs, u)` fills the
    /// logit cotangent `u` of each sample from its head outputs.
    pub fn accumulate_gradient<F>(&self, features: &Matrix, rows: &[usize], mut cot: F) -> Result<Vec<f64>>
    where
        F: FnMut(usize, &[f64], &mut [f64]),
    {
        let mut grad = vec![0.0; self.param_count()];
        let c = self.config.num_logits;
        for chunk in rows.chunks(CHUNK_ROWS) {
            let fwd = self.forward_batch(features.select_rows(chunk))?;
            let mut u = Matrix::zeros(chunk.len(), c);
            for (pos, &row) in chunk.iter().enumerate() {
                cot(row, fwd.outputs.row(pos), u.row_mut(pos));
            }
            self.backward_batch(&fwd, u, &mut grad)?;
        }
        Ok(grad)
    }

    /// Calls `visit(row, logits, outputs)` for every listed row, in order.
    pub fn for_each_output<F>(&self, features: &Matrix, rows: &[usize], mut visit: F) -> Result<()>
    where
        F: FnMut(usize, &[f64], &[f64]),
    {
        for chunk in rows.chunks(CHUNK_ROWS) {
            let fwd = self.forward_batch(features.select_rows(chunk))?;
            for (pos, &row) in chunk.iter().enumerate() {
                visit(row, fwd.logits.row(pos), fwd.outputs.row(pos));
            }
        }
        Ok(())
    }
}
