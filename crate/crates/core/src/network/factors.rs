//! Per-sample model derivatives in factored form.
//!
//! For a dense layer the derivative of `h_c` with respect to `W_k` is the
//! outer product `s_k δ_k aᵀ_{k-1}`, so inner products and norms between
//! per-sample derivatives reduce to products of small per-layer dot products
//! and never need the full parameter-length vectors.

use super::batch::CHUNK_ROWS;
use super::NetworkState;
use crate::error::{Error, Result};
use crate::numcore::{dot, gemm, Matrix};

#[derive(Debug, Clone)]
struct LayerFactor {
    scale: f64,
    deltas: Matrix,
    inputs: Matrix,
}

/// Factored `∇h_c(x_i)` for a fixed set of rows.
#[derive(Debug, Clone)]
pub struct DerivativeFactors {
    rows: Vec<usize>,
    logit: usize,
    layers: Vec<LayerFactor>,
}

impl DerivativeFactors {
    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn logit(&self) -> usize {
        self.logit
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// `⟨∇h_c(x_i), ∇h_c(x_j)⟩` for positions `i`, `j` in [`rows`](Self::rows).
    pub fn inner(&self, i: usize, j: usize) -> f64 {
        self.layers
            .iter()
            .map(|l| {
                l.scale * l.scale
                    * dot(l.deltas.row(i), l.deltas.row(j))
                    * dot(l.inputs.row(i), l.inputs.row(j))
            })
            .sum()
    }

    pub fn sq_norm(&self, i: usize) -> f64 {
        self.inner(i, i)
    }

    /// Angle between the derivatives at positions `i` and `j`.
    pub fn angle(&self, i: usize, j: usize) -> Result<f64> {
        let ni = self.sq_norm(i);
        let nj = self.sq_norm(j);
        if ni == 0.0 || nj == 0.0 {
            return Err(Error::DegenerateAngle);
        }
        Ok((self.inner(i, j) / (ni * nj).sqrt()).clamp(-1.0, 1.0).acos())
    }
}

impl NetworkState {
    fn unit_logit_cotangent(&self, b: usize, logit: usize) -> Matrix {
        let c = self.config.num_logits;
        let mut u = Matrix::zeros(b, c);
        for r in 0..b {
            u.row_mut(r)[logit] = 1.0;
        }
        u
    }

    pub fn derivative_factors(
        &self,
        features: &Matrix,
        rows: &[usize],
        logit: usize,
    ) -> Result<DerivativeFactors> {
        self.check_logit(logit)?;
        let fwd = self.forward_batch(features.select_rows(rows))?;
        let deltas = self.layer_deltas(&fwd, self.unit_logit_cotangent(rows.len(), logit));
        let layers = deltas
            .into_iter()
            .enumerate()
            .map(|(k, d)| LayerFactor {
                scale: self.scale(k),
                deltas: d,
                inputs: fwd.layer_input(k).clone(),
            })
            .collect();
        Ok(DerivativeFactors {
            rows: rows.to_vec(),
            logit,
            layers,
        })
    }

    /// For each row: `(⟨∇h_c(x_i), reference⟩, ‖∇h_c(x_i)‖²)`, streamed in chunks.
    pub fn derivative_projections(
        &self,
        features: &Matrix,
        rows: &[usize],
        logit: usize,
        reference: &[f64],
    ) -> Result<Vec<(f64, f64)>> {
        self.check_logit(logit)?;
        if reference.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                context: "derivative_projections reference",
                expected: self.param_count(),
                got: reference.len(),
            });
        }
        let mut out = Vec::with_capacity(rows.len());
        for chunk in rows.chunks(CHUNK_ROWS) {
            let b = chunk.len();
            let fwd = self.forward_batch(features.select_rows(chunk))?;
            let deltas = self.layer_deltas(&fwd, self.unit_logit_cotangent(b, logit));
            let mut proj = vec![0.0; b];
            let mut sq = vec![0.0; b];
            for (k, d) in deltas.iter().enumerate() {
                let (o, fan_in) = self.shape(k);
                let s = self.scale(k);
                let a = fwd.layer_input(k);
                let r = &reference[self.offsets[k]..self.offsets[k + 1]];
                let mut q = Matrix::zeros(b, fan_in);
                gemm(b, o, fan_in, 1.0, (d.data(), o, 1), (r, fan_in, 1), 0.0, (q.data_mut(), fan_in, 1));
                for i in 0..b {
                    proj[i] += s * dot(q.row(i), a.row(i));
                    sq[i] += s * s * dot(d.row(i), d.row(i)) * dot(a.row(i), a.row(i));
                }
            }
            out.extend(proj.into_iter().zip(sq));
        }
        Ok(out)
    }
}
