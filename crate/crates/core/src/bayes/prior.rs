use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Normal prior N(mean, cov) with a symmetric positive-definite covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalPrior {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    precision: DMatrix<f64>,
}

impl NormalPrior {
    pub fn new(mean: Vec<f64>, cov: Vec<Vec<f64>>) -> Result<Self> {
        let d = mean.len();
        if cov.len() != d || cov.iter().any(|r| r.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: cov.len(),
            });
        }
        let cov = DMatrix::from_fn(d, d, |i, j| cov[i][j]);
        Self::from_matrices(DVector::from_vec(mean), cov)
    }

    pub fn from_matrices(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if (&cov - cov.transpose()).amax() > 1e-12 * cov.amax().max(1.0) {
            return Err(Error::Domain("prior covariance is not symmetric".into()));
        }
        let chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Domain("prior covariance is not positive definite".into()))?;
        let precision = chol.inverse();
        Ok(Self { mean, cov, precision })
    }

    /// N(m·1, γ²I).
    pub fn isotropic(dim: usize, mean: f64, variance: f64) -> Result<Self> {
        Self::from_matrices(
            DVector::from_element(dim, mean),
            DMatrix::from_diagonal_element(dim, dim, variance),
        )
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    /// Restriction to the given indices (marginal).
    pub fn marginal(&self, idx: &[usize]) -> Result<Self> {
        let d = idx.len();
        Self::from_matrices(
            DVector::from_iterator(d, idx.iter().map(|&i| self.mean[i])),
            DMatrix::from_fn(d, d, |a, b| self.cov[(idx[a], idx[b])]),
        )
    }

    /// Conditional law of the remaining coordinates given θ_`index` = `value`.
    pub fn condition_on(&self, index: usize, value: f64) -> Result<(Vec<usize>, Self)> {
        let rest: Vec<usize> = (0..self.dim()).filter(|&i| i != index).collect();
        let s00 = self.cov[(index, index)];
        let d = rest.len();
        let mean = DVector::from_iterator(
            d,
            rest.iter()
                .map(|&i| self.mean[i] + self.cov[(i, index)] / s00 * (value - self.mean[index])),
        );
        let cov = DMatrix::from_fn(d, d, |a, b| {
            let (i, j) = (rest[a], rest[b]);
            self.cov[(i, j)] - self.cov[(i, index)] * self.cov[(index, j)] / s00
        });
        Ok((rest, Self::from_matrices(mean, cov)?))
    }
}

/// Independent uniform coordinates on the box Π[lowerᵢ, upperᵢ]. A
/// coordinate with lower = upper is a point mass.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformPrior {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl UniformPrior {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        for (a, b) in lower.iter().zip(&upper) {
            if !(a.is_finite() && b.is_finite() && a <= b) {
                return Err(Error::Domain(format!("uniform prior needs a <= b, got [{a}, {b}]")));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn interval(a: f64, b: f64) -> Result<Self> {
        Self::new(vec![a], vec![b])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn mean(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(a, b)| 0.5 * (a + b)).collect()
    }

    pub fn variances(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(a, b)| (b - a).powi(2) / 12.0)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Prior {
    Normal(NormalPrior),
    Uniform(UniformPrior),
}

impl Prior {
    pub fn dim(&self) -> usize {
        match self {
            Prior::Normal(p) => p.dim(),
            Prior::Uniform(p) => p.dim(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(NormalPrior::new(vec![0.0, 0.0], vec![vec![1.0, 2.0], vec![2.0, 1.0]]).is_err());
        assert!(NormalPrior::new(vec![0.0], vec![vec![1.0, 0.0]]).is_err());
        assert!(NormalPrior::new(vec![0.0, 0.0], vec![vec![1.0, 0.1], vec![0.2, 1.0]]).is_err());
        assert!(UniformPrior::interval(1.0, 0.0).is_err());
        assert!(UniformPrior::interval(1.0, 1.0).is_ok());
        let u = UniformPrior::interval(0.0, 2.0).unwrap();
        assert_eq!(u.mean(), vec![1.0]);
        assert!((u.variances()[0] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn conditioning_bivariate() {
        let p = NormalPrior::new(vec![1.0, 2.0], vec![vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap();
        let (rest, c) = p.condition_on(0, 3.0).unwrap();
        assert_eq!(rest, vec![1]);
        assert!((c.mean()[0] - (2.0 + 0.25 * 2.0)).abs() < 1e-15);
        assert!((c.cov()[(0, 0)] - (1.0 - 0.125)).abs() < 1e-15);
        let prec = p.precision() * p.cov();
        assert!((prec - DMatrix::identity(2, 2)).amax() < 1e-14);
    }
}
