//! Bayesian estimation of the drift vector and the associated optimal
//! stopping problems.
//!
//! * [`normal`]: conjugate normal prior, closed-form posterior and the
//!   deterministic cost curve F_H(t) = ct + tr((R_H(t)+Σ⁻¹)⁻¹).
//! * [`uniform`]: uniform prior for a single linear-drift coefficient, whose
//!   posterior is a truncated normal.
//! * [`dp`]: backward induction for the uniform-prior stopping problem.
//! * [`oracle`]: brute-force tensor-grid posterior moments for n ≤ 2.

pub mod dp;
pub mod normal;
pub mod oracle;
pub mod prior;
pub mod uniform;

use serde::Serialize;

pub use dp::{uniform_stop_dp, LatticeSpec, StoppingPolicy};
pub use normal::{
    normal_cost_curve, normal_optimal_stop, normal_posterior, normal_posterior_full, CostCurve, NormalCost,
};
pub use oracle::{quadrature_posterior_oracle, OracleGrid};
pub use prior::{NormalPrior, Prior, UniformPrior};
pub use uniform::{truncated_normal_moments, uniform_posterior_n1, UniformPosterior};

/// Posterior mean and covariance at time `t`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PosteriorSummary {
    pub t: f64,
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
    pub mse_trace: f64,
}

impl PosteriorSummary {
    pub(crate) fn from_parts(t: f64, mean: &nalgebra::DVector<f64>, cov: &nalgebra::DMatrix<f64>) -> Self {
        let cov = 0.5 * (cov + cov.transpose());
        Self {
            t,
            mean: mean.iter().copied().collect(),
            cov: (0..cov.nrows()).map(|i| cov.row(i).iter().copied().collect()).collect(),
            mse_trace: cov.trace(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("posterior summary serializes")
    }
}

/// Outcome of an optimal-stopping computation.
#[derive(Debug, Clone)]
pub struct StoppingSolution {
    /// Deterministic stopping time, or `Some(0.0)` when the adaptive
    /// policy stops immediately; `None` when the stopping time is random.
    pub tau: Option<f64>,
    pub expected_cost: f64,
    pub cost_curve: Option<CostCurve>,
    pub policy: Option<StoppingPolicy>,
}
