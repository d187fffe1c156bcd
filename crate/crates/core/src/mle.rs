//! Gram matrix R_H(t), score vector ψ^H_t and the maximum-likelihood
//! estimate θ̂ = R_H(t)⁻¹ ψ^H_t.
//!
//! Everything is restricted to the identifiable indices (rows ψᵢ that do
//! not vanish). For a polynomial basis the constant coefficient is
//! recovered from ξ(0), since B^H_0 = 0.

use nalgebra::{DMatrix, DVector};

use crate::basis::{alpha_coeff, PsiEvaluations, PsiSource};
use crate::error::{Error, Result};
use crate::hurst::HurstModel;
use crate::io::fmt_f64;
use crate::transform::MartingalePath;

/// Largest accepted condition estimate of R_H(t).
pub const CONDITION_LIMIT: f64 = 1e12;

/// R_H(t) on the identifiable indices `active`.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    pub t: f64,
    pub r: DMatrix<f64>,
    pub active: Vec<usize>,
    pub condition_estimate: f64,
}

impl GramMatrix {
    fn new(t: f64, r: DMatrix<f64>, active: Vec<usize>) -> Result<Self> {
        let r = 0.5 * (&r + r.transpose());
        let condition_estimate = condition_estimate(&r);
        if t > 0.0 && !(condition_estimate.is_finite() && condition_estimate > 0.0) {
            return Err(Error::IllConditioned {
                basis: format!("Gram matrix over indices {active:?} is not positive definite"),
                condition: condition_estimate,
            });
        }
        Ok(Self {
            t,
            r,
            active,
            condition_estimate,
        })
    }

    pub fn dim(&self) -> usize {
        self.active.len()
    }

    /// Full (n+1)×(n+1) matrix with zero rows/columns on masked indices.
    pub fn full(&self, dimension: usize) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(dimension, dimension);
        for (a, &i) in self.active.iter().enumerate() {
            for (b, &j) in self.active.iter().enumerate() {
                out[(i, j)] = self.r[(a, b)];
            }
        }
        out
    }
}

/// λ_max/λ_min of a symmetric matrix; infinite when λ_min ≤ 0.
fn condition_estimate(r: &DMatrix<f64>) -> f64 {
    if r.nrows() == 0 {
        return f64::INFINITY;
    }
    let eig = r.clone().symmetric_eigen();
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// ψ^H_t on the identifiable indices.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    pub t: f64,
    pub values: DVector<f64>,
    pub active: Vec<usize>,
}

impl ScoreVector {
    /// Full-length vector with zeros on masked indices.
    pub fn full(&self, dimension: usize) -> DVector<f64> {
        let mut out = DVector::zeros(dimension);
        for (a, &i) in self.active.iter().enumerate() {
            out[i] = self.values[a];
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateMethod {
    MaximumLikelihood,
}

/// Point estimate with its information matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimationResult {
    pub theta_hat: Vec<f64>,
    /// False for components that could not be estimated (reported as 0).
    pub estimated: Vec<bool>,
    pub t: f64,
    pub info: GramMatrix,
    pub method: EstimateMethod,
}

/// R_H(t). Closed form (α_H(i,j)/σ²) t^{i+j−2H} for closed-form
/// polynomial ψ, otherwise trapezoidal ∫ψᵢψⱼ dw on the grid.
pub fn gram_matrix(psi: &PsiEvaluations, model: &HurstModel, t: f64) -> Result<GramMatrix> {
    match psi.source {
        PsiSource::ClosedPolynomial { sigma } => {
            psi.grid.index_of(t)?;
            let active = psi.active();
            if active.is_empty() {
                return Err(Error::IllConditioned {
                    basis: "no identifiable basis index".into(),
                    condition: f64::INFINITY,
                });
            }
            let d = active.len();
            let r = DMatrix::from_fn(d, d, |a, b| {
                let (i, j) = (active[a], active[b]);
                alpha_coeff(model, i, j) / (sigma * sigma)
                    * if t == 0.0 { 0.0 } else { t.powf((i + j) as f64 - 2.0 * model.h()) }
            });
            GramMatrix::new(t, r, active)
        }
        PsiSource::Numeric => gram_matrix_numeric(psi, model, t),
    }
}

/// Trapezoidal ∫₀ᵗ ψᵢψⱼ dw_H over the grid, regardless of ψ's source.
pub fn gram_matrix_numeric(psi: &PsiEvaluations, model: &HurstModel, t: f64) -> Result<GramMatrix> {
    let k = psi.grid.index_of(t)?;
    let active = psi.active();
    if active.is_empty() {
        return Err(Error::IllConditioned {
            basis: "no identifiable basis index".into(),
            condition: f64::INFINITY,
        });
    }
    let pts = psi.grid.points();
    let d = active.len();
    let mut r = DMatrix::zeros(d, d);
    for j in 0..k {
        let dw = model.weight_w(pts[j + 1]) - model.weight_w(pts[j]);
        for a in 0..d {
            for b in a..d {
                let (p, q) = (&psi.psi[active[a]], &psi.psi[active[b]]);
                r[(a, b)] += 0.5 * (p[j] * q[j] + p[j + 1] * q[j + 1]) * dw;
            }
        }
    }
    for a in 0..d {
        for b in 0..a {
            r[(a, b)] = r[(b, a)];
        }
    }
    GramMatrix::new(t, r, active)
}

/// ψ^H_t = ∫₀ᵗ ψᵢ dM^H, summed cell by cell with the trapezoidal value of
/// the (deterministic) integrand on each cell.
pub fn score_vector(psi: &PsiEvaluations, mp: &MartingalePath, t: f64) -> Result<ScoreVector> {
    if psi.grid != mp.grid {
        return Err(Error::GridMismatch("ψ and martingale path grids differ".into()));
    }
    let k = psi.grid.index_of(t)?;
    let active = psi.active();
    let values = DVector::from_iterator(
        active.len(),
        active.iter().map(|&i| {
            let p = &psi.psi[i];
            (0..k)
                .map(|j| 0.5 * (p[j] + p[j + 1]) * (mp.martingale[j + 1] - mp.martingale[j]))
                .sum()
        }),
    );
    Ok(ScoreVector { t, values, active })
}

/// θ̂ = R_H(t)⁻¹ψ^H_t via Cholesky on the identifiable block.
pub fn mle_estimate(psi: &PsiEvaluations, mp: &MartingalePath, t: f64) -> Result<EstimationResult> {
    if t <= 0.0 {
        return Err(Error::NoInformation(t));
    }
    let gram = gram_matrix(psi, &mp.model, t)?;
    let score = score_vector(psi, mp, t)?;
    solve_normal_equations(psi, mp.xi0, gram, &score)
}

fn solve_normal_equations(
    psi: &PsiEvaluations,
    xi0: f64,
    gram: GramMatrix,
    score: &ScoreVector,
) -> Result<EstimationResult> {
    if gram.condition_estimate > CONDITION_LIMIT {
        return Err(Error::IllConditioned {
            basis: format!("{:?} basis of dimension {}", psi.source, psi.dimension()),
            condition: gram.condition_estimate,
        });
    }
    let chol = gram.r.clone().cholesky().ok_or_else(|| Error::IllConditioned {
        basis: format!("{:?} basis of dimension {}", psi.source, psi.dimension()),
        condition: gram.condition_estimate,
    })?;
    let sol = chol.solve(&score.values);
    let dim = psi.dimension();
    let mut theta_hat = vec![0.0; dim];
    let mut estimated = vec![false; dim];
    for (a, &i) in gram.active.iter().enumerate() {
        theta_hat[i] = sol[a];
        estimated[i] = true;
    }
    if psi.constant_first && !psi.identifiable[0] {
        theta_hat[0] = xi0;
        estimated[0] = true;
    }
    Ok(EstimationResult {
        theta_hat,
        estimated,
        t: gram.t,
        info: gram,
        method: EstimateMethod::MaximumLikelihood,
    })
}

/// Estimates at every grid time t_k > 0 where R_H(t_k) is usable.
pub fn estimate_trajectory(psi: &PsiEvaluations, mp: &MartingalePath) -> Result<Vec<EstimationResult>> {
    let pts = psi.grid.points();
    let mut out = Vec::new();
    for &t in &pts[1..] {
        match mle_estimate(psi, mp, t) {
            Ok(r) => out.push(r),
            Err(Error::IllConditioned { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// CSV with header `t,theta_0,...,theta_n,cond`.
pub fn trajectory_csv(results: &[EstimationResult], dimension: usize) -> String {
    let mut out = String::from("t");
    for i in 0..dimension {
        out.push_str(&format!(",theta_{i}"));
    }
    out.push_str(",cond\n");
    for r in results {
        out.push_str(&fmt_f64(r.t));
        for v in &r.theta_hat {
            out.push(',');
            out.push_str(&fmt_f64(*v));
        }
        out.push(',');
        out.push_str(&fmt_f64(r.info.condition_estimate));
        out.push('\n');
    }
    out
}
