use serde::{Deserialize, Serialize};

use super::SeededRng;
use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                context: "Matrix::new",
                expected: rows * cols,
                got: data.len(),
            });
        }
        if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "matrix entry {bad} is not finite"
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix by copying the listed rows of `self`, in order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut data = Vec::with_capacity(rows.len() * self.cols);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        Self {
            rows: rows.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub(crate) fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::DimensionMismatch {
                context: "Matrix::matvec",
                expected: self.cols,
                got: x.len(),
            });
        }
        Ok((0..self.rows)
            .map(|r| super::dot(self.row(r), x))
            .collect())
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                context: "Matrix::matmul",
                expected: self.cols,
                got: other.rows,
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        gemm(
            self.rows,
            self.cols,
            other.cols,
            1.0,
            (&self.data, self.cols, 1),
            (&other.data, other.cols, 1),
            0.0,
            (&mut out.data, other.cols, 1),
        );
        Ok(out)
    }

    /// `(1/scale) · selfᵀ self`, the scaled Gram matrix of the columns.
    pub fn scaled_gram(&self, scale: f64) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.cols);
        gemm(
            self.cols,
            self.rows,
            self.cols,
            1.0 / scale,
            (&self.data, 1, self.cols),
            (&self.data, self.cols, 1),
            0.0,
            (&mut out.data, self.cols, 1),
        );
        out
    }
}

/// Matrix whose entries are i.i.d. standard normal draws, filled row-major.
pub fn gaussian_matrix(rows: usize, cols: usize, rng: &mut SeededRng) -> Result<Matrix> {
    if rows == 0 || cols == 0 {
        return Err(Error::invalid(format!(
            "gaussian_matrix needs nonzero dimensions, got {rows}x{cols}"
        )));
    }
    let data = (0..rows * cols).map(|_| rng.gaussian()).collect();
    Ok(Matrix { rows, cols, data })
}

type StridedRef<'a> = (&'a [f64], usize, usize);
type StridedMut<'a> = (&'a mut [f64], usize, usize);

fn span(rows: usize, cols: usize, rs: usize, cs: usize) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * rs + (cols - 1) * cs + 1
    }
}

/// `C ← alpha·A·B + beta·C` for strided operands (A is m×k, B is k×n).
///
/// Strides are given as `(slice, row_stride, col_stride)`, so transposed
/// operands are passed by swapping the strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: StridedRef<'_>,
    b: StridedRef<'_>,
    beta: f64,
    c: StridedMut<'_>,
) {
    assert!(a.0.len() >= span(m, k, a.1, a.2), "gemm: A out of bounds");
    assert!(b.0.len() >= span(k, n, b.1, b.2), "gemm: B out of bounds");
    assert!(c.0.len() >= span(m, n, c.1, c.2), "gemm: C out of bounds");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                let v = &mut c.0[i * c.1 + j * c.2];
                *v *= beta;
            }
        }
        return;
    }
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.0.as_ptr(),
            a.1 as isize,
            a.2 as isize,
            b.0.as_ptr(),
            b.1 as isize,
            b.2 as isize,
            beta,
            c.0.as_mut_ptr(),
            c.1 as isize,
            c.2 as isize,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_matvec_is_identity() {
        let x = [1.5, -2.0, 3.25];
        assert_eq!(Matrix::identity(3).matvec(&x).unwrap(), x.to_vec());
    }

    #[test]
    fn matmul_matches_hand_product() {
        let a = Matrix::new(2, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let b = Matrix::new(3, 2, vec![7., 8., 9., 10., 11., 12.]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.data(), &[58., 64., 139., 154.]);
        assert!(b.matmul(&b).is_err());
    }

    #[test]
    fn transpose_and_gram_agree() {
        let a = Matrix::new(3, 2, vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let g = a.transpose().matmul(&a).unwrap();
        let s = a.scaled_gram(1.0);
        assert_eq!(g, s);
    }

    #[test]
    fn rejects_bad_shapes_and_values() {
        assert!(Matrix::new(2, 2, vec![1.0; 3]).is_err());
        assert!(Matrix::new(1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(Matrix::identity(2).matvec(&[1.0]).is_err());
    }

    #[test]
    fn gaussian_matrix_is_deterministic() {
        let a = gaussian_matrix(3, 3, &mut SeededRng::new(7)).unwrap();
        let b = gaussian_matrix(3, 3, &mut SeededRng::new(7)).unwrap();
        assert_eq!(a, b);
        assert!(gaussian_matrix(0, 3, &mut SeededRng::new(7)).is_err());
    }

    #[test]
    fn gaussian_matrix_moments() {
        let m = gaussian_matrix(200, 200, &mut SeededRng::new(11)).unwrap();
        let n = m.data().len() as f64;
        let mean = m.data().iter().sum::<f64>() / n;
        let var = m.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((0.9..1.1).contains(&var), "var {var}");
    }

    #[test]
    fn successive_draws_differ() {
        let mut rng = SeededRng::new(3);
        let a = gaussian_matrix(1, 1, &mut rng).unwrap();
        let b = gaussian_matrix(1, 1, &mut rng).unwrap();
        assert_ne!(a.get(0, 0), b.get(0, 0));
    }
}
