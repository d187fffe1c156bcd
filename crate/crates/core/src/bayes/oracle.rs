use nalgebra::{DMatrix, DVector};

use super::prior::Prior;
use super::PosteriorSummary;
use crate::error::{Error, Result};
use crate::mle::{GramMatrix, ScoreVector};
use crate::quad::gauss_legendre_on;

/// Composite Gauss–Legendre rule per coordinate: `panels` equal panels of
/// `order` nodes each, over ±`width_sd` prior standard deviations (normal
/// prior) or the prior box (uniform prior).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleGrid {
    pub panels: usize,
    pub order: usize,
    pub width_sd: f64,
}

impl Default for OracleGrid {
    fn default() -> Self {
        Self {
            panels: 40,
            order: 10,
            width_sd: 8.0,
        }
    }
}

fn composite_rule(lo: f64, hi: f64, g: &OracleGrid) -> (Vec<f64>, Vec<f64>) {
    let mut x = Vec::with_capacity(g.panels * g.order);
    let mut w = Vec::with_capacity(g.panels * g.order);
    let h = (hi - lo) / g.panels as f64;
    for p in 0..g.panels {
        let (px, pw) = gauss_legendre_on(g.order, lo + p as f64 * h, lo + (p + 1) as f64 * h);
        x.extend(px);
        w.extend(pw);
    }
    (x, w)
}

/// Posterior moments of p(x)·Λ(x), Λ(x) = exp{xᵀψ − ½xᵀRx}, by tensor-grid
/// quadrature. Dimension at most 2.
pub fn quadrature_posterior_oracle(
    prior: &Prior,
    gram: &GramMatrix,
    score: &ScoreVector,
    grid: &OracleGrid,
) -> Result<PosteriorSummary> {
    let d = prior.dim();
    if d == 0 || d > 2 {
        return Err(Error::Domain(format!("quadrature oracle supports dimension 1 or 2, got {d}")));
    }
    if gram.dim() != d || score.values.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: gram.dim(),
        });
    }
    if grid.panels == 0 || grid.order == 0 {
        return Err(Error::Domain("oracle grid needs at least one node".into()));
    }
    let rules: Vec<(Vec<f64>, Vec<f64>)> = (0..d)
        .map(|i| match prior {
            Prior::Normal(p) => {
                let s = p.cov()[(i, i)].sqrt();
                composite_rule(p.mean()[i] - grid.width_sd * s, p.mean()[i] + grid.width_sd * s, grid)
            }
            Prior::Uniform(p) => composite_rule(p.lower()[i], p.upper()[i], grid),
        })
        .collect();
    let log_prior = |x: &DVector<f64>| match prior {
        Prior::Normal(p) => {
            let dx = x - p.mean();
            -0.5 * (dx.transpose() * p.precision() * &dx)[(0, 0)]
        }
        Prior::Uniform(_) => 0.0,
    };

    // points and log-weights
    let mut pts: Vec<DVector<f64>> = Vec::new();
    let mut logs: Vec<f64> = Vec::new();
    let n1 = rules[0].0.len();
    let n2 = if d == 2 { rules[1].0.len() } else { 1 };
    for i in 0..n1 {
        for j in 0..n2 {
            let (x, qw) = if d == 2 {
                (
                    DVector::from_vec(vec![rules[0].0[i], rules[1].0[j]]),
                    rules[0].1[i] * rules[1].1[j],
                )
            } else {
                (DVector::from_element(1, rules[0].0[i]), rules[0].1[i])
            };
            let ll = x.dot(&score.values) - 0.5 * (x.transpose() * &gram.r * &x)[(0, 0)];
            logs.push(qw.ln() + log_prior(&x) + ll);
            pts.push(x);
        }
    }
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let wts: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = wts.iter().sum();
    let mut mean = DVector::zeros(d);
    for (x, w) in pts.iter().zip(&wts) {
        mean += x * (*w / z);
    }
    let mut cov = DMatrix::zeros(d, d);
    for (x, w) in pts.iter().zip(&wts) {
        let dx = x - &mean;
        cov += &dx * dx.transpose() * (*w / z);
    }
    Ok(PosteriorSummary::from_parts(gram.t, &mean, &cov))
}
