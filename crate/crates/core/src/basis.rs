//! Drift bases and the ψᵢ functions obtained by pushing φᵢ′/σ through
//! the fundamental-martingale kernel and differentiating in w_H.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::hurst::{frac_derivative, HurstModel, KernelMassTable, TimeGrid};
use crate::special::gamma;

/// Diffusion coefficient σ(t).
#[derive(Clone)]
pub enum Sigma {
    Constant(f64),
    Function(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl Sigma {
    pub fn function<F: Fn(f64) -> f64 + Send + Sync + 'static>(f: F) -> Self {
        Sigma::Function(Arc::new(f))
    }

    pub fn at(&self, t: f64) -> f64 {
        match self {
            Sigma::Constant(s) => *s,
            Sigma::Function(f) => f(t),
        }
    }

    pub fn constant(&self) -> Option<f64> {
        match self {
            Sigma::Constant(s) => Some(*s),
            Sigma::Function(_) => None,
        }
    }

    /// Checks σ > 0 at every sample time.
    pub(crate) fn check_positive(&self, times: impl IntoIterator<Item = f64>) -> Result<()> {
        for t in times {
            let v = self.at(t);
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::NonPositiveSigma { t, value: v });
            }
        }
        Ok(())
    }
}

impl fmt::Debug for Sigma {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sigma::Constant(s) => write!(f, "Sigma::Constant({s})"),
            Sigma::Function(_) => write!(f, "Sigma::Function(..)"),
        }
    }
}

#[derive(Debug, Clone)]
pub enum BasisKind {
    /// φᵢ(t) = tⁱ for i = 0..=degree.
    Polynomial { degree: usize },
    /// φᵢ′ sampled on a grid (columns i = 0..=n), linearly interpolated.
    Tabulated { grid: TimeGrid, dphi: Vec<Vec<f64>> },
}

/// Drift basis φ₀..φₙ together with the diffusion coefficient.
#[derive(Debug, Clone)]
pub struct DriftBasis {
    pub kind: BasisKind,
    pub sigma: Sigma,
}

impl DriftBasis {
    pub fn polynomial(degree: usize, sigma: Sigma) -> Self {
        Self {
            kind: BasisKind::Polynomial { degree },
            sigma,
        }
    }

    pub fn tabulated(grid: TimeGrid, dphi: Vec<Vec<f64>>, sigma: Sigma) -> Result<Self> {
        if dphi.is_empty() {
            return Err(Error::Parse("tabulated basis needs at least one column".into()));
        }
        for (i, col) in dphi.iter().enumerate() {
            if col.len() != grid.len() {
                return Err(Error::DimensionMismatch {
                    expected: grid.len(),
                    got: col.len(),
                });
            }
            if col.iter().any(|v| !v.is_finite()) {
                return Err(Error::Parse(format!("dphi_{i} has non-finite entries")));
            }
        }
        Ok(Self {
            kind: BasisKind::Tabulated { grid, dphi },
            sigma,
        })
    }

    /// Reads a tabulated basis from CSV with header `t,dphi_0,...,dphi_n`.
    pub fn read_tabulated_csv(path: &Path, sigma: Sigma) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let (grid, dphi) = parse_tabulated_csv(&text)?;
        Self::tabulated(grid, dphi, sigma)
    }

    /// Number of basis functions, n + 1.
    pub fn dimension(&self) -> usize {
        match &self.kind {
            BasisKind::Polynomial { degree } => degree + 1,
            BasisKind::Tabulated { dphi, .. } => dphi.len(),
        }
    }

    pub fn is_polynomial(&self) -> bool {
        matches!(self.kind, BasisKind::Polynomial { .. })
    }

    /// φᵢ′(t).
    pub fn dphi(&self, i: usize, t: f64) -> f64 {
        match &self.kind {
            BasisKind::Polynomial { .. } => {
                if i == 0 {
                    0.0
                } else {
                    i as f64 * t.powi(i as i32 - 1)
                }
            }
            BasisKind::Tabulated { grid, dphi } => interpolate(grid.points(), &dphi[i], t),
        }
    }

    /// φᵢ(t); for a tabulated basis this is ∫₀ᵗ φᵢ′ (trapezoid on the
    /// table grid), i.e. φᵢ(0) = 0.
    pub fn phi(&self, i: usize, t: f64) -> f64 {
        match &self.kind {
            BasisKind::Polynomial { .. } => t.powi(i as i32),
            BasisKind::Tabulated { grid, dphi } => {
                let pts = grid.points();
                let col = &dphi[i];
                let mut acc = 0.0;
                for j in 1..pts.len() {
                    if pts[j] <= t {
                        acc += 0.5 * (col[j] + col[j - 1]) * (pts[j] - pts[j - 1]);
                    } else {
                        if pts[j - 1] < t {
                            let v = interpolate(pts, col, t);
                            acc += 0.5 * (col[j - 1] + v) * (t - pts[j - 1]);
                        }
                        break;
                    }
                }
                acc
            }
        }
    }

    /// Returns a copy of a tabulated basis with every φᵢ multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        match &self.kind {
            BasisKind::Polynomial { .. } => {
                Err(Error::Domain("scaling is only defined for tabulated bases".into()))
            }
            BasisKind::Tabulated { grid, dphi } => Self::tabulated(
                grid.clone(),
                dphi.iter().map(|c0| c0.iter().map(|v| v * c).collect()).collect(),
                self.sigma.clone(),
            ),
        }
    }
}

fn interpolate(x: &[f64], y: &[f64], t: f64) -> f64 {
    if t <= x[0] {
        return y[0];
    }
    let n = x.len();
    if t >= x[n - 1] {
        return y[n - 1];
    }
    let j = x.partition_point(|&p| p <= t) - 1;
    let u = (t - x[j]) / (x[j + 1] - x[j]);
    y[j] + u * (y[j + 1] - y[j])
}

pub(crate) fn parse_tabulated_csv(text: &str) -> Result<(TimeGrid, Vec<Vec<f64>>)> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::Parse("empty basis table".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() < 2 || cols[0] != "t" {
        return Err(Error::Parse(format!("bad basis header `{header}`")));
    }
    for (i, c) in cols[1..].iter().enumerate() {
        if *c != format!("dphi_{i}") {
            return Err(Error::Parse(format!("expected column dphi_{i}, found `{c}`")));
        }
    }
    let width = cols.len();
    let mut t = Vec::new();
    let mut dphi = vec![Vec::new(); width - 1];
    for (row, line) in lines.enumerate() {
        let vals: Vec<f64> = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse(format!("row {}: {e}", row + 1)))?;
        if vals.len() != width {
            return Err(Error::Parse(format!(
                "row {} has {} fields, expected {width}",
                row + 1,
                vals.len()
            )));
        }
        t.push(vals[0]);
        for (i, v) in vals[1..].iter().enumerate() {
            dphi[i].push(*v);
        }
    }
    Ok((TimeGrid::new(t)?, dphi))
}

/// How a set of ψ evaluations was obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PsiSource {
    /// Closed polynomial formulas with constant σ.
    ClosedPolynomial { sigma: f64 },
    Numeric,
}

/// ψᵢ(tⱼ) for every basis index i and grid time tⱼ.
#[derive(Debug, Clone)]
pub struct PsiEvaluations {
    pub grid: TimeGrid,
    /// Row i holds ψᵢ on the grid.
    pub psi: Vec<Vec<f64>>,
    /// False exactly for rows that vanish identically.
    pub identifiable: Vec<bool>,
    pub source: PsiSource,
    /// True when index 0 is the constant function (recoverable from ξ(0)).
    pub constant_first: bool,
}

impl PsiEvaluations {
    pub fn dimension(&self) -> usize {
        self.psi.len()
    }

    /// Indices with identifiable[i] = true.
    pub fn active(&self) -> Vec<usize> {
        (0..self.psi.len()).filter(|&i| self.identifiable[i]).collect()
    }
}

/// β_H(i) from the polynomial closed form.
pub fn beta_coeff(model: &HurstModel, i: usize) -> f64 {
    if i == 0 {
        return 0.0;
    }
    let h = model.h();
    let fi = i as f64;
    fi * (2.0 - 2.0 * h + fi - 1.0) / (2.0 - 2.0 * h) * gamma(3.0 - 2.0 * h)
        / gamma(3.0 - 2.0 * h + fi - 1.0)
        * gamma(1.5 - h + fi - 1.0)
        / gamma(1.5 - h)
}

/// α_H(i, j) = λ⁻¹ β_H(i) β_H(j) (2−2H)/(i+j−2H); zero when i or j is 0.
pub fn alpha_coeff(model: &HurstModel, i: usize, j: usize) -> f64 {
    if i == 0 || j == 0 {
        return 0.0;
    }
    let h = model.h();
    beta_coeff(model, i) * beta_coeff(model, j) * (2.0 - 2.0 * h)
        / (model.lambda() * (i as f64 + j as f64 - 2.0 * h))
}

/// ψᵢ(t) = (β_H(i)/σ) t^{i−1} for a polynomial basis with constant σ.
pub fn psi_closed_poly(
    model: &HurstModel,
    basis: &DriftBasis,
    grid: &TimeGrid,
) -> Result<PsiEvaluations> {
    let BasisKind::Polynomial { degree } = basis.kind else {
        return Err(Error::Domain("closed-form ψ needs a polynomial basis".into()));
    };
    let sigma = basis
        .sigma
        .constant()
        .ok_or_else(|| Error::Domain("closed-form ψ needs constant σ".into()))?;
    if !(sigma > 0.0) {
        return Err(Error::NonPositiveSigma { t: 0.0, value: sigma });
    }
    let psi: Vec<Vec<f64>> = (0..=degree)
        .map(|i| {
            if i == 0 {
                return vec![0.0; grid.len()];
            }
            let c = beta_coeff(model, i) / sigma;
            grid.points().iter().map(|t| c * t.powi(i as i32 - 1)).collect()
        })
        .collect();
    let identifiable = (0..=degree).map(|i| i > 0).collect();
    Ok(PsiEvaluations {
        grid: grid.clone(),
        psi,
        identifiable,
        source: PsiSource::ClosedPolynomial { sigma },
        constant_first: true,
    })
}

/// Minimum number of grid steps for the numeric ψ.
pub const PSI_NUMERIC_MIN_STEPS: usize = 8;

/// ψᵢ by discretizing ∫₀ᵗ k_H(t,s) σ⁻¹(s) φᵢ′(s) ds with exact kernel
/// masses (midpoint values for σ⁻¹φᵢ′) and then differentiating in w_H.
pub fn psi_numeric(
    model: &HurstModel,
    basis: &DriftBasis,
    grid: &TimeGrid,
) -> Result<PsiEvaluations> {
    let table = KernelMassTable::new(model, grid);
    psi_numeric_with(model, basis, grid, &table)
}

pub(crate) fn psi_numeric_with(
    model: &HurstModel,
    basis: &DriftBasis,
    grid: &TimeGrid,
    table: &KernelMassTable,
) -> Result<PsiEvaluations> {
    let pts = grid.points();
    if pts.len() < PSI_NUMERIC_MIN_STEPS + 1 {
        return Err(Error::InvalidGrid(format!(
            "numeric ψ needs at least {PSI_NUMERIC_MIN_STEPS} steps, got {}",
            pts.len() - 1
        )));
    }
    let mids: Vec<f64> = pts.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    basis.sigma.check_positive(mids.iter().copied())?;
    let dim = basis.dimension();
    let mut psi = Vec::with_capacity(dim);
    for i in 0..dim {
        let integrand: Vec<f64> = mids
            .iter()
            .map(|&s| basis.dphi(i, s) / basis.sigma.at(s))
            .collect();
        let f: Vec<f64> = (0..pts.len())
            .map(|k| {
                table
                    .row(k)
                    .iter()
                    .zip(&integrand)
                    .map(|(m, g)| m * g)
                    .sum()
            })
            .collect();
        psi.push(frac_derivative(model, grid, &f)?);
    }
    let scale = psi
        .iter()
        .flat_map(|r| r.iter())
        .fold(1.0f64, |acc, v| acc.max(v.abs()));
    let identifiable = psi
        .iter()
        .map(|r| r.iter().fold(0.0f64, |acc, v| acc.max(v.abs())) >= 1e-12 * scale)
        .collect();
    Ok(PsiEvaluations {
        grid: grid.clone(),
        psi,
        identifiable,
        source: PsiSource::Numeric,
        constant_first: basis.is_polynomial(),
    })
}
