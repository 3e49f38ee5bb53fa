use crate::error::{Error, Result};

pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    debug_assert_eq!(u.len(), v.len());
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// `y ← y + a·x`
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub fn add_assign(y: &mut [f64], x: &[f64]) {
    axpy(1.0, x, y);
}

pub fn scale(v: &mut [f64], a: f64) {
    v.iter_mut().for_each(|x| *x *= a);
}

pub fn max_abs_diff(u: &[f64], v: &[f64]) -> f64 {
    u.iter()
        .zip(v)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

/// `‖u − v‖ / ‖v‖`, or the absolute difference norm when `v` is zero.
pub fn relative_error(u: &[f64], v: &[f64]) -> f64 {
    let diff: f64 = u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
    let base = norm(v);
    if base > 0.0 {
        diff.sqrt() / base
    } else {
        diff.sqrt()
    }
}

/// Clamped cosine similarity.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            context: "cosine",
            expected: u.len(),
            got: v.len(),
        });
    }
    let uu = dot(u, u);
    let vv = dot(v, v);
    if uu == 0.0 || vv == 0.0 {
        return Err(Error::DegenerateAngle);
    }
    // one square root keeps exactly (anti-)parallel inputs at exactly ±1
    Ok((dot(u, v) / (uu * vv).sqrt()).clamp(-1.0, 1.0))
}

/// Angle in `[0, π]` between two nonzero vectors.
pub fn cosine_angle(u: &[f64], v: &[f64]) -> Result<f64> {
    Ok(cosine(u, v)?.acos())
}

/// Sum of `count` vectors produced by `item`, combined as a balanced binary
/// tree over the index range so the rounding pattern depends only on `count`.
pub fn tree_sum<F>(count: usize, len: usize, item: &mut F) -> Vec<f64>
where
    F: FnMut(usize) -> Vec<f64>,
{
    fn go<F: FnMut(usize) -> Vec<f64>>(lo: usize, hi: usize, item: &mut F) -> Vec<f64> {
        if hi - lo == 1 {
            return item(lo);
        }
        let mid = lo + (hi - lo) / 2;
        let mut left = go(lo, mid, item);
        let right = go(mid, hi, item);
        add_assign(&mut left, &right);
        left
    }
    if count == 0 {
        return vec![0.0; len];
    }
    go(0, count, item)
}
