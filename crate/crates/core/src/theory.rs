//! Closed-form angle transfer between inputs and model derivatives, with
//! Monte-Carlo checks at finite width.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{init_ntk, Activation, NetworkConfig};
use crate::numcore::{gaussian_matrix, Matrix, SeededRng};

/// Linear networks preserve the input angle.
pub fn theta_h_linear(theta_d: f64) -> f64 {
    theta_d
}

/// `cos θ_h = ((π − θ_d)/π)·cos θ_d + sin θ_d/(2π)` for a two-layer ReLU net.
pub fn theta_h_relu(theta_d: f64) -> f64 {
    relu_cosine(theta_d).clamp(-1.0, 1.0).acos()
}

fn relu_cosine(t: f64) -> f64 {
    (PI - t) / PI * t.cos() + t.sin() / (2.0 * PI)
}

pub fn theta_h_closed(kind: Activation, theta_d: f64) -> f64 {
    match kind {
        Activation::Linear => theta_h_linear(theta_d),
        Activation::Relu => theta_h_relu(theta_d),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloEstimate {
    pub mean: f64,
    /// Standard error of the mean; 0 for a single trial.
    pub std_err: f64,
    pub trials: usize,
}

/// Mean `θ_h` between `∇h(x)` and `∇h(z)` over `trials` independent NTK
/// inits, with `x = (1, 0)` and `z = (cos θ_d, sin θ_d)`. `depth` counts
/// weight layers, so `depth = 2` is one hidden layer of width `m`.
pub fn mc_theta_h(
    kind: Activation,
    depth: usize,
    theta_d: f64,
    m: usize,
    trials: usize,
    rng: &mut SeededRng,
) -> Result<MonteCarloEstimate> {
    if depth < 2 || m == 0 || trials == 0 {
        return Err(Error::invalid(format!(
            "need depth >= 2, width >= 1 and trials >= 1 (got {depth}, {m}, {trials})"
        )));
    }
    let inputs = Matrix::new(2, 2, vec![1.0, 0.0, theta_d.cos(), theta_d.sin()])?;
    let cfg = NetworkConfig::binary(2, vec![m; depth - 1], kind);
    let mut angles = Vec::with_capacity(trials);
    for t in 0..trials {
        let mut trial_rng = rng.derive(t as u64);
        let state = init_ntk(cfg.clone(), &mut trial_rng)?;
        let factors = state.derivative_factors(&inputs, &[0, 1], 0)?;
        angles.push(factors.angle(0, 1)?);
    }
    // consume one draw so successive calls on the same generator differ
    rng.next_u64();
    let n = trials as f64;
    let mean = angles.iter().sum::<f64>() / n;
    let std_err = if trials > 1 {
        let var = angles.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    Ok(MonteCarloEstimate { mean, std_err, trials })
}

/// `points` evenly spaced angles covering `[0, π]`.
pub fn angle_grid(points: usize) -> Result<Vec<f64>> {
    if points < 2 {
        return Err(Error::invalid("an angle grid needs at least two points"));
    }
    Ok((0..points).map(|k| PI * k as f64 / (points - 1) as f64).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleCurve {
    pub kind: Activation,
    pub depth: usize,
    pub width: usize,
    pub theta_d: Vec<f64>,
    /// Only two-layer nets have a closed form.
    pub closed: Option<Vec<f64>>,
    pub mc: Vec<MonteCarloEstimate>,
}

impl AngleCurve {
    /// Largest `|MC mean − closed form|`, when a closed form exists.
    pub fn max_deviation(&self) -> Option<f64> {
        let closed = self.closed.as_ref()?;
        Some(
            closed
                .iter()
                .zip(&self.mc)
                .map(|(c, e)| (c - e.mean).abs())
                .fold(0.0, f64::max),
        )
    }

    /// Whether the MC means never decrease over the grid points in `[0, π/2]`.
    pub fn mc_monotone_to_right_angle(&self) -> bool {
        let means: Vec<f64> = self
            .theta_d
            .iter()
            .zip(&self.mc)
            .filter(|(t, _)| **t <= FRAC_PI_2 + 1e-12)
            .map(|(_, e)| e.mean)
            .collect();
        means.windows(2).all(|w| w[1] >= w[0])
    }
}

/// MC curve over an evenly spaced grid; each grid point uses its own
/// derived stream.
pub fn angle_curve(
    kind: Activation,
    depth: usize,
    grid_points: usize,
    m: usize,
    trials: usize,
    seed: u64,
) -> Result<AngleCurve> {
    let theta_d = angle_grid(grid_points)?;
    let base = SeededRng::new(seed);
    let mc = theta_d
        .iter()
        .enumerate()
        .map(|(k, &t)| mc_theta_h(kind, depth, t, m, trials, &mut base.derive(k as u64)))
        .collect::<Result<Vec<_>>>()?;
    let closed = (depth == 2).then(|| theta_d.iter().map(|&t| theta_h_closed(kind, t)).collect());
    Ok(AngleCurve {
        kind,
        depth,
        width: m,
        theta_d,
        closed,
        mc,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub pairs: usize,
    pub order_violations: usize,
    pub range_violations: usize,
}

impl MonotonicityReport {
    pub fn passed(&self) -> bool {
        self.order_violations == 0 && self.range_violations == 0
    }
}

/// Draws `samples` ordered pairs `θ ≤ θ'` in `[0, π/2]` and checks that the
/// closed form keeps their order and stays within `[0, π/2]`.
pub fn corollary_monotonicity_check(kind: Activation, samples: usize, rng: &mut SeededRng) -> MonotonicityReport {
    let mut report = MonotonicityReport {
        pairs: samples,
        order_violations: 0,
        range_violations: 0,
    };
    let in_range = |h: f64| (0.0..=FRAC_PI_2).contains(&h);
    for _ in 0..samples {
        let a = rng.uniform() * FRAC_PI_2;
        let b = rng.uniform() * FRAC_PI_2;
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (hl, hh) = (theta_h_closed(kind, lo), theta_h_closed(kind, hi));
        if hl > hh {
            report.order_violations += 1;
        }
        if !in_range(hl) || !in_range(hh) {
            report.range_violations += 1;
        }
    }
    report
}

/// `max_ij |((1/m)AᵀA)_ij − δ_ij|` for an `m × d` standard Gaussian `A`.
pub fn wishart_identity_check(m: usize, d: usize, rng: &mut SeededRng) -> Result<f64> {
    let a = gaussian_matrix(m, d, rng)?;
    let gram = a.scaled_gram(m as f64);
    let mut worst: f64 = 0.0;
    for i in 0..d {
        for j in 0..d {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((gram.get(i, j) - target).abs());
        }
    }
    Ok(worst)
}
