//! The fundamental martingale M^H of an observed path, the innovation
//! ratio m^H = M^H / w_H, and the log-likelihood.
//!
//! σ is folded into the transform: M_t = ∫₀ᵗ k_H(t,s) σ(s)⁻¹ dξ_s. With
//! this normalization ⟨M⟩ = w_H under zero drift and the scalar estimate
//! is θ̂₁ = σ M_t / w_H(t).

use nalgebra::DVector;

use crate::basis::{PsiEvaluations, Sigma};
use crate::error::{Error, Result};
use crate::fbm::SamplePath;
use crate::hurst::{HurstModel, KernelMassTable, TimeGrid};
use crate::io::{fmt_f64, parse_csv_table};
use crate::mle::{gram_matrix, score_vector};

/// M^H, w_H and m^H on a grid, plus the starting value ξ(0).
#[derive(Debug, Clone, PartialEq)]
pub struct MartingalePath {
    pub grid: TimeGrid,
    pub model: HurstModel,
    pub martingale: Vec<f64>,
    pub weight: Vec<f64>,
    pub ratio: Vec<f64>,
    pub xi0: f64,
}

impl MartingalePath {
    /// Assembles a path from M values; w and m are derived.
    pub fn from_martingale(model: HurstModel, grid: TimeGrid, martingale: Vec<f64>, xi0: f64) -> Result<Self> {
        if martingale.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                got: martingale.len(),
            });
        }
        let weight: Vec<f64> = grid.points().iter().map(|&t| model.weight_w(t)).collect();
        let mut mp = Self {
            grid,
            model,
            martingale,
            weight,
            ratio: Vec::new(),
            xi0,
        };
        mp.ratio = innovation_ratio(&mp);
        Ok(mp)
    }

    pub fn horizon(&self) -> f64 {
        self.grid.horizon()
    }

    /// CSV with header `t,M,w,m`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,M,w,m\n");
        for k in 0..self.grid.len() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                fmt_f64(self.grid.points()[k]),
                fmt_f64(self.martingale[k]),
                fmt_f64(self.weight[k]),
                fmt_f64(self.ratio[k])
            ));
        }
        out
    }

    /// Reads the CSV form back; w and m are recomputed from `model` and
    /// must agree with the file.
    pub fn from_csv(text: &str, model: HurstModel, xi0: f64) -> Result<Self> {
        let cols = parse_csv_table(text, &["t", "M", "w", "m"])?;
        let grid = TimeGrid::new(cols[0].clone())?;
        let mp = Self::from_martingale(model, grid, cols[1].clone(), xi0)?;
        for (k, (a, b)) in mp.weight.iter().zip(&cols[2]).enumerate() {
            if (a - b).abs() > 1e-12 * a.abs().max(1.0) {
                return Err(Error::Parse(format!("w column disagrees with H at row {}", k + 1)));
            }
        }
        Ok(mp)
    }
}

/// Precomputed quadrature weights for transforming many paths on the same
/// grid: weight[k][j] = σ(s̄ⱼ)⁻¹ · kernel_mass(t_k, sⱼ, sⱼ₊₁) / (sⱼ₊₁ − sⱼ).
#[derive(Debug, Clone)]
pub struct TransformPlan {
    model: HurstModel,
    grid: TimeGrid,
    weights: Vec<Vec<f64>>,
}

impl TransformPlan {
    pub fn new(model: &HurstModel, grid: &TimeGrid, sigma: &Sigma) -> Result<Self> {
        let table = KernelMassTable::new(model, grid);
        Self::with_table(model, grid, sigma, &table)
    }

    pub fn with_table(
        model: &HurstModel,
        grid: &TimeGrid,
        sigma: &Sigma,
        table: &KernelMassTable,
    ) -> Result<Self> {
        let pts = grid.points();
        let mids: Vec<f64> = pts.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        sigma.check_positive(mids.iter().copied())?;
        let scale: Vec<f64> = pts
            .windows(2)
            .zip(&mids)
            .map(|(w, &s)| 1.0 / (sigma.at(s) * (w[1] - w[0])))
            .collect();
        let weights = (0..pts.len())
            .map(|k| table.row(k).iter().zip(&scale).map(|(m, c)| m * c).collect())
            .collect();
        Ok(Self {
            model: *model,
            grid: grid.clone(),
            weights,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// Linear map ξ ↦ M on this grid.
    pub fn apply(&self, xi: &SamplePath) -> Result<MartingalePath> {
        if xi.grid != self.grid {
            return Err(Error::GridMismatch("path grid differs from transform grid".into()));
        }
        let incr: Vec<f64> = xi.values.windows(2).map(|w| w[1] - w[0]).collect();
        let martingale = self
            .weights
            .iter()
            .map(|row| row.iter().zip(&incr).map(|(w, d)| w * d).sum())
            .collect();
        MartingalePath::from_martingale(self.model, self.grid.clone(), martingale, xi.values[0])
    }
}

/// M^H of an observed path: M[k] = Σ_{j<k} σ(s̄ⱼ)⁻¹ (mass_kj / Δsⱼ) Δξⱼ.
pub fn martingale_transform(xi: &SamplePath, sigma: &Sigma, model: &HurstModel) -> Result<MartingalePath> {
    TransformPlan::new(model, &xi.grid, sigma)?.apply(xi)
}

/// m^H = M / w with m[0] = 0.
pub fn innovation_ratio(mp: &MartingalePath) -> Vec<f64> {
    mp.martingale
        .iter()
        .zip(&mp.weight)
        .enumerate()
        .map(|(k, (m, w))| if k == 0 || *w == 0.0 { 0.0 } else { m / w })
        .collect()
}

/// log Λ_T(θ) = θᵀψ^H_T − ½ θᵀ R_H(T) θ over the full basis dimension;
/// components on non-identifiable indices do not contribute.
pub fn log_likelihood(theta: &[f64], psi: &PsiEvaluations, mp: &MartingalePath) -> Result<f64> {
    if theta.len() != psi.dimension() {
        return Err(Error::DimensionMismatch {
            expected: psi.dimension(),
            got: theta.len(),
        });
    }
    let t = mp.horizon();
    let score = score_vector(psi, mp, t)?;
    let gram = gram_matrix(psi, &mp.model, t)?;
    let active = DVector::from_iterator(gram.active.len(), gram.active.iter().map(|&i| theta[i]));
    Ok(log_likelihood_active(&active, &gram.r, &score.values))
}

/// θᵀs − ½θᵀRθ for vectors already restricted to the identifiable set.
pub fn log_likelihood_active(theta: &DVector<f64>, r: &nalgebra::DMatrix<f64>, score: &DVector<f64>) -> f64 {
    theta.dot(score) - 0.5 * (theta.transpose() * r * theta)[(0, 0)]
}
