//! Hurst-index constants, the fundamental-martingale kernel, its exact
//! interval masses, the bracket weight `w_H` and differentiation with
//! respect to `w_H`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{beta, beta_reg_tails, gamma};

/// Hurst index together with its derived normalizing constants κ_H and λ_H.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HurstModel {
    h: f64,
    kappa: f64,
    lambda: f64,
}

impl HurstModel {
    pub fn new(h: f64) -> Result<Self> {
        if !(h > 0.0 && h < 1.0) {
            return Err(Error::Domain(format!("Hurst index {h} outside (0, 1)")));
        }
        let kappa = 2.0 * h * gamma(1.5 - h) * gamma(0.5 + h);
        let lambda = 2.0 * h * gamma(3.0 - 2.0 * h) * gamma(0.5 + h) / gamma(1.5 - h);
        Ok(Self { h, kappa, lambda })
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Kernel k_H(t, s) = κ⁻¹ s^{1/2−H} (t−s)^{1/2−H} for 0 < s < t.
    pub fn kernel_k(&self, t: f64, s: f64) -> Result<f64> {
        if !(s > 0.0 && s < t) {
            return Err(Error::Domain(format!("kernel needs 0 < s < t, got s={s}, t={t}")));
        }
        let e = 0.5 - self.h;
        Ok((s.powf(e) * (t - s).powf(e)) / self.kappa)
    }

    /// Exact ∫ₐᵇ k_H(t, s) ds via the incomplete beta function with both
    /// shape parameters 3/2 − H.
    pub fn kernel_mass(&self, t: f64, a: f64, b: f64) -> Result<f64> {
        if !(t > 0.0 && 0.0 <= a && a <= b && b <= t) {
            return Err(Error::Domain(format!(
                "kernel mass needs 0 <= a <= b <= t, t > 0; got a={a}, b={b}, t={t}"
            )));
        }
        if a == b {
            return Ok(0.0);
        }
        let p = 1.5 - self.h;
        let lo = beta_reg_tails(p, p, a / t);
        let hi = beta_reg_tails(p, p, b / t);
        Ok(self.mass_scale(t) * tail_difference(lo, hi))
    }

    /// κ⁻¹ t^{2−2H} B(3/2−H, 3/2−H), the full-interval kernel mass.
    fn mass_scale(&self, t: f64) -> f64 {
        let p = 1.5 - self.h;
        t.powf(2.0 - 2.0 * self.h) * beta(p, p) / self.kappa
    }

    /// Kernel masses over every cell of `nodes[..]` for the target time
    /// `t = nodes.last()`; element j is ∫ over [nodes[j], nodes[j+1]].
    pub(crate) fn kernel_masses_to(&self, nodes: &[f64]) -> Vec<f64> {
        let t = *nodes.last().expect("nonempty nodes");
        let p = 1.5 - self.h;
        let scale = self.mass_scale(t);
        let tails: Vec<(f64, f64)> = nodes
            .iter()
            .map(|&s| beta_reg_tails(p, p, (s / t).clamp(0.0, 1.0)))
            .collect();
        tails
            .windows(2)
            .map(|w| scale * tail_difference(w[0], w[1]))
            .collect()
    }

    /// w_H(t) = λ⁻¹ t^{2−2H}.
    pub fn weight_w(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        t.powf(2.0 - 2.0 * self.h) / self.lambda
    }

    /// The factor (λ/(2−2H)) t^{2H−1} converting d/dt into d/dw_H.
    pub fn dw_factor(&self, t: f64) -> f64 {
        self.lambda / (2.0 - 2.0 * self.h) * t.powf(2.0 * self.h - 1.0)
    }
}

fn tail_difference(lo: (f64, f64), hi: (f64, f64)) -> f64 {
    // use whichever tail is small at both ends
    if lo.0 >= 0.5 {
        (lo.1 - hi.1).max(0.0)
    } else {
        (hi.0 - lo.0).max(0.0)
    }
}

/// Kernel masses ∫ k_H(t_k, s) ds over every grid cell [s_j, s_{j+1}]
/// with j < k, for every grid time t_k. Row k has k entries; row 0 is
/// empty.
#[derive(Debug, Clone)]
pub struct KernelMassTable {
    rows: Vec<Vec<f64>>,
}

impl KernelMassTable {
    pub fn new(model: &HurstModel, grid: &TimeGrid) -> Self {
        use rayon::prelude::*;
        let pts = grid.points();
        let rows = (0..pts.len())
            .into_par_iter()
            .map(|k| {
                if k == 0 {
                    Vec::new()
                } else {
                    model.kernel_masses_to(&pts[..=k])
                }
            })
            .collect();
        Self { rows }
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.rows[k]
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Discretization t₀ = 0 < t₁ < … < t_N of [0, T].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    points: Vec<f64>,
}

impl TimeGrid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidGrid("empty grid".into()));
        }
        if points[0] != 0.0 {
            return Err(Error::InvalidGrid(format!("first point must be 0, got {}", points[0])));
        }
        if let Some(i) = points.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidGrid(format!(
                "not strictly increasing at index {}",
                i + 1
            )));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidGrid("non-finite point".into()));
        }
        Ok(Self { points })
    }

    /// Uniform grid with `n` steps on [0, horizon].
    pub fn uniform(horizon: f64, n: usize) -> Result<Self> {
        if n == 0 || !(horizon > 0.0) {
            return Err(Error::InvalidGrid(format!("need n >= 1 and T > 0, got n={n}, T={horizon}")));
        }
        let h = horizon / n as f64;
        let mut pts: Vec<f64> = (0..=n).map(|k| k as f64 * h).collect();
        pts[n] = horizon;
        Self::new(pts)
    }

    /// A grid with the single point {0}.
    pub fn origin() -> Self {
        Self { points: vec![0.0] }
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// Number of points (N + 1).
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        *self.points.last().expect("grid is nonempty")
    }

    /// Index of the grid point equal to `t` (to relative 1e-12).
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let tol = 1e-12 * self.horizon().max(1.0);
        let pos = self.points.partition_point(|&p| p < t - tol);
        match self.points.get(pos) {
            Some(&p) if (p - t).abs() <= tol => Ok(pos),
            _ => Err(Error::GridMismatch(format!("t = {t} is not a grid point"))),
        }
    }

    /// True when spacing is uniform to relative 1e-9.
    pub fn is_uniform(&self) -> bool {
        if self.points.len() < 3 {
            return true;
        }
        let h = self.points[1] - self.points[0];
        self.points
            .windows(2)
            .all(|w| ((w[1] - w[0]) - h).abs() <= 1e-9 * h)
    }

    /// Grid truncated to the points up to and including index `k`.
    pub fn prefix(&self, k: usize) -> Self {
        Self {
            points: self.points[..=k].to_vec(),
        }
    }
}

/// Derivative of a function given by samples at three nodes, evaluated at
/// `x` (derivative of the quadratic interpolant).
fn quadratic_derivative(t: [f64; 3], f: [f64; 3], x: f64) -> f64 {
    let [t0, t1, t2] = t;
    let l0 = ((x - t1) + (x - t2)) / ((t0 - t1) * (t0 - t2));
    let l1 = ((x - t0) + (x - t2)) / ((t1 - t0) * (t1 - t2));
    let l2 = ((x - t0) + (x - t1)) / ((t2 - t0) * (t2 - t1));
    f[0] * l0 + f[1] * l1 + f[2] * l2
}

/// Ordinary derivative df/dt of grid samples: second-order central
/// differences inside, second-order one-sided at the right end. The value
/// at index 0 is left as NaN for the caller to fill.
pub(crate) fn grid_derivative(points: &[f64], f: &[f64]) -> Vec<f64> {
    let n = points.len();
    let mut d = vec![f64::NAN; n];
    if n == 2 {
        let s = (f[1] - f[0]) / (points[1] - points[0]);
        d[1] = s;
        return d;
    }
    for i in 1..n - 1 {
        d[i] = quadratic_derivative(
            [points[i - 1], points[i], points[i + 1]],
            [f[i - 1], f[i], f[i + 1]],
            points[i],
        );
    }
    d[n - 1] = quadratic_derivative(
        [points[n - 3], points[n - 2], points[n - 1]],
        [f[n - 3], f[n - 2], f[n - 1]],
        points[n - 1],
    );
    d
}

/// Differentiation with respect to w_H: (λ/(2−2H)) t^{2H−1} df/dt.
///
/// The value at t₀ = 0 is a convention: linear extrapolation from the
/// first two interior values (it never enters a dw-integral).
pub fn frac_derivative(model: &HurstModel, grid: &TimeGrid, f: &[f64]) -> Result<Vec<f64>> {
    let pts = grid.points();
    if pts.len() < 2 {
        return Err(Error::InvalidGrid("frac_derivative needs at least 2 grid points".into()));
    }
    if f.len() != pts.len() {
        return Err(Error::DimensionMismatch {
            expected: pts.len(),
            got: f.len(),
        });
    }
    let mut d = grid_derivative(pts, f);
    for i in 1..pts.len() {
        d[i] *= model.dw_factor(pts[i]);
    }
    d[0] = if pts.len() == 2 {
        d[1]
    } else {
        let slope = (d[2] - d[1]) / (pts[2] - pts[1]);
        d[1] - slope * pts[1]
    };
    Ok(d)
}
