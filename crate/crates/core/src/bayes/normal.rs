use nalgebra::{DMatrix, DVector};

use super::prior::NormalPrior;
use super::{PosteriorSummary, StoppingSolution};
use crate::basis::{alpha_coeff, PsiEvaluations, PsiSource};
use crate::error::{Error, Result};
use crate::hurst::{HurstModel, TimeGrid};
use crate::io::fmt_f64;
use crate::mle::{GramMatrix, ScoreVector};

fn spd_inverse(m: DMatrix<f64>) -> DMatrix<f64> {
    m.cholesky()
        .expect("R + Σ⁻¹ is positive definite for a positive-definite Σ")
        .inverse()
}

/// Posterior N((R+Σ⁻¹)⁻¹(ψ+Σ⁻¹m), (R+Σ⁻¹)⁻¹) on the indices of `gram`.
/// The prior must already be restricted to those indices.
pub fn normal_posterior(prior: &NormalPrior, gram: &GramMatrix, score: &ScoreVector) -> Result<PosteriorSummary> {
    if prior.dim() != gram.dim() {
        return Err(Error::DimensionMismatch {
            expected: gram.dim(),
            got: prior.dim(),
        });
    }
    if score.values.len() != gram.dim() {
        return Err(Error::DimensionMismatch {
            expected: gram.dim(),
            got: score.values.len(),
        });
    }
    let (mean, cov) = conjugate_update(prior, &gram.r, &score.values);
    Ok(PosteriorSummary::from_parts(gram.t, &mean, &cov))
}

fn conjugate_update(prior: &NormalPrior, r: &DMatrix<f64>, score: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let cov = spd_inverse(r + prior.precision());
    let mean = &cov * (score + prior.precision() * prior.mean());
    (mean, cov)
}

/// Posterior over the whole basis. Masked indices get no information. For a
/// polynomial basis whose constant term is not identifiable, θ₀ = ξ(0) is
/// known exactly: the prior is conditioned on it and the rest updated.
pub fn normal_posterior_full(
    prior: &NormalPrior,
    psi: &PsiEvaluations,
    gram: &GramMatrix,
    score: &ScoreVector,
    xi0: f64,
) -> Result<PosteriorSummary> {
    let n = psi.dimension();
    if prior.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: prior.dim(),
        });
    }
    let r = gram.full(n);
    let s = score.full(n);
    if psi.constant_first && !psi.identifiable[0] {
        let (rest, cond) = prior.condition_on(0, xi0)?;
        let d = rest.len();
        let rr = DMatrix::from_fn(d, d, |a, b| r[(rest[a], rest[b])]);
        let sr = DVector::from_iterator(d, rest.iter().map(|&i| s[i]));
        let (m, c) = conjugate_update(&cond, &rr, &sr);
        let mut mean = DVector::zeros(n);
        let mut cov = DMatrix::zeros(n, n);
        mean[0] = xi0;
        for (a, &i) in rest.iter().enumerate() {
            mean[i] = m[a];
            for (b, &j) in rest.iter().enumerate() {
                cov[(i, j)] = c[(a, b)];
            }
        }
        return Ok(PosteriorSummary::from_parts(gram.t, &mean, &cov));
    }
    let (mean, cov) = conjugate_update(prior, &r, &s);
    Ok(PosteriorSummary::from_parts(gram.t, &mean, &cov))
}

#[derive(Debug, Clone)]
enum GramSource {
    /// (α_H(i,j)/σ², i+j−2H) for every pair.
    Closed { coeff: DMatrix<f64>, exponent: DMatrix<f64> },
    /// Cumulative trapezoidal R at each grid time.
    Tabulated { times: Vec<f64>, r: Vec<DMatrix<f64>> },
}

/// F_H(t) = ct + tr((R_H(t)+Σ⁻¹)⁻¹) over the full basis, evaluable at
/// any t in [0, T]. Non-identifiable indices keep their prior variance,
/// so F_H(0) = tr(Σ).
#[derive(Debug, Clone)]
pub struct NormalCost {
    c: f64,
    precision: DMatrix<f64>,
    horizon: f64,
    source: GramSource,
}

impl NormalCost {
    pub fn new(prior: &NormalPrior, psi: &PsiEvaluations, model: &HurstModel, c: f64) -> Result<Self> {
        if !(c >= 0.0 && c.is_finite()) {
            return Err(Error::Domain(format!("observation cost must be >= 0, got {c}")));
        }
        let n = psi.dimension();
        if prior.dim() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: prior.dim(),
            });
        }
        let active = psi.identifiable.clone();
        let source = match psi.source {
            PsiSource::ClosedPolynomial { sigma } => GramSource::Closed {
                coeff: DMatrix::from_fn(n, n, |i, j| {
                    if active[i] && active[j] {
                        alpha_coeff(model, i, j) / (sigma * sigma)
                    } else {
                        0.0
                    }
                }),
                exponent: DMatrix::from_fn(n, n, |i, j| (i + j) as f64 - 2.0 * model.h()),
            },
            PsiSource::Numeric => {
                let pts = psi.grid.points();
                let mut r = vec![DMatrix::zeros(n, n)];
                for j in 0..pts.len() - 1 {
                    let dw = model.weight_w(pts[j + 1]) - model.weight_w(pts[j]);
                    let step = DMatrix::from_fn(n, n, |a, b| {
                        if active[a] && active[b] {
                            let (p, q) = (&psi.psi[a], &psi.psi[b]);
                            0.5 * (p[j] * q[j] + p[j + 1] * q[j + 1]) * dw
                        } else {
                            0.0
                        }
                    });
                    let next = &r[j] + step;
                    r.push(next);
                }
                GramSource::Tabulated {
                    times: pts.to_vec(),
                    r,
                }
            }
        };
        Ok(Self {
            c,
            precision: prior.precision().clone(),
            horizon: psi.grid.horizon(),
            source,
        })
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Full R_H(t); linear interpolation between grid times for tabulated ψ.
    pub fn gram_at(&self, t: f64) -> DMatrix<f64> {
        match &self.source {
            GramSource::Closed { coeff, exponent } => {
                if t <= 0.0 {
                    DMatrix::zeros(coeff.nrows(), coeff.ncols())
                } else {
                    coeff.zip_map(exponent, |a, e| if a == 0.0 { 0.0 } else { a * t.powf(e) })
                }
            }
            GramSource::Tabulated { times, r } => {
                let k = times.partition_point(|&s| s <= t).clamp(1, times.len() - 1);
                let (t0, t1) = (times[k - 1], times[k]);
                let u = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
                &r[k - 1] * (1.0 - u) + &r[k] * u
            }
        }
    }

    /// tr((R_H(t)+Σ⁻¹)⁻¹).
    pub fn mse_trace(&self, t: f64) -> f64 {
        spd_inverse(self.gram_at(t) + &self.precision).trace()
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.c * t + self.mse_trace(t)
    }
}

/// F_H sampled on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CostCurve {
    pub t: Vec<f64>,
    pub f: Vec<f64>,
}

impl CostCurve {
    /// CSV with header `t,F`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,F\n");
        for (t, f) in self.t.iter().zip(&self.f) {
            out.push_str(&format!("{},{}\n", fmt_f64(*t), fmt_f64(*f)));
        }
        out
    }

    /// Number of sign changes of the forward difference (zero steps skipped).
    pub fn sign_changes(&self) -> usize {
        let signs: Vec<f64> = self
            .f
            .windows(2)
            .map(|w| w[1] - w[0])
            .filter(|d| *d != 0.0)
            .map(f64::signum)
            .collect();
        signs.windows(2).filter(|s| s[0] != s[1]).count()
    }
}

pub fn normal_cost_curve(
    prior: &NormalPrior,
    psi: &PsiEvaluations,
    model: &HurstModel,
    c: f64,
    grid: &TimeGrid,
) -> Result<CostCurve> {
    let cost = NormalCost::new(prior, psi, model, c)?;
    Ok(sample_curve(&cost, grid))
}

fn sample_curve(cost: &NormalCost, grid: &TimeGrid) -> CostCurve {
    let t = grid.points().to_vec();
    let f = t.iter().map(|&s| cost.eval(s)).collect();
    CostCurve { t, f }
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > tol {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        }
    }
    0.5 * (lo + hi)
}

/// Deterministic optimal stopping time: grid scan of F_H, then golden
/// section on the cells around the best grid point.
pub fn normal_optimal_stop(cost: &NormalCost, grid: &TimeGrid, tol: f64) -> Result<StoppingSolution> {
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("refinement tolerance must be > 0, got {tol}")));
    }
    let curve = sample_curve(cost, grid);
    let pts = grid.points();
    let k = curve
        .f
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("grid is never empty");
    let mut tau = pts[k];
    let mut best = curve.f[k];
    if pts.len() > 1 {
        let lo = pts[k.saturating_sub(1)];
        let hi = pts[(k + 1).min(pts.len() - 1)];
        let cand = golden_section(|t| cost.eval(t), lo, hi, tol);
        let fc = cost.eval(cand);
        if fc < best {
            tau = cand;
            best = fc;
        }
    }
    Ok(StoppingSolution {
        tau: Some(tau),
        expected_cost: best,
        cost_curve: Some(curve),
        policy: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{psi_closed_poly, psi_numeric, DriftBasis, Sigma};
    use crate::fbm::{observation_from_sampler, FbmSampler, RngSeed, SimMethod};
    use crate::mle::{gram_matrix, mle_estimate, score_vector};
    use crate::transform::martingale_transform;

    fn setup(h: f64, degree: usize, sigma: f64, theta: &[f64]) -> (HurstModel, PsiEvaluations, crate::transform::MartingalePath) {
        let m = HurstModel::new(h).unwrap();
        let g = TimeGrid::uniform(1.0, 128).unwrap();
        let basis = DriftBasis::polynomial(degree, Sigma::Constant(sigma));
        let psi = psi_closed_poly(&m, &basis, &g).unwrap();
        let sampler = FbmSampler::new(&m, &g, SimMethod::Cholesky).unwrap();
        let xi = observation_from_sampler(theta, &basis, &sampler, RngSeed::new(11, 0)).unwrap();
        let mp = martingale_transform(&xi, &basis.sigma, &m).unwrap();
        (m, psi, mp)
    }

    #[test]
    fn time_zero_returns_prior() {
        let (m, psi, mp) = setup(0.3, 2, 1.0, &[0.0, 1.0, 0.5]);
        let gram = gram_matrix(&psi, &m, 0.0).unwrap();
        let score = score_vector(&psi, &mp, 0.0).unwrap();
        let prior = NormalPrior::new(vec![0.5, -1.0], vec![vec![2.0, 0.3], vec![0.3, 1.0]]).unwrap();
        let post = normal_posterior(&prior, &gram, &score).unwrap();
        assert!((post.mean[0] - 0.5).abs() < 1e-14 && (post.mean[1] + 1.0).abs() < 1e-14);
        assert!((post.cov[0][1] - 0.3).abs() < 1e-14);
        assert!((post.mse_trace - 3.0).abs() < 1e-14);
    }

    #[test]
    fn flat_prior_limit_is_mle() {
        let (m, psi, mp) = setup(0.35, 2, 0.7, &[0.0, 1.0, -0.5]);
        let gram = gram_matrix(&psi, &m, 1.0).unwrap();
        let score = score_vector(&psi, &mp, 1.0).unwrap();
        let prior = NormalPrior::isotropic(2, 0.0, 1e8).unwrap();
        let post = normal_posterior(&prior, &gram, &score).unwrap();
        let mle = mle_estimate(&psi, &mp, 1.0).unwrap();
        for a in 0..2 {
            let rel = (post.mean[a] - mle.theta_hat[a + 1]).abs() / mle.theta_hat[a + 1].abs();
            assert!(rel <= 1e-6, "{rel}");
        }
    }

    #[test]
    fn scalar_formula_and_shrinkage() {
        let sigma = 0.6;
        let (m, psi, mp) = setup(0.7, 1, sigma, &[0.0, 1.3]);
        let (mean0, g2) = (0.4, 0.5);
        let prior = NormalPrior::isotropic(1, mean0, g2).unwrap();
        for k in [8, 64, 128] {
            let t = psi.grid.points()[k];
            let gram = gram_matrix(&psi, &m, t).unwrap();
            let score = score_vector(&psi, &mp, t).unwrap();
            let post = normal_posterior(&prior, &gram, &score).unwrap();
            let (mm, w) = (mp.martingale[k], mp.weight[k]);
            let prec = w / (sigma * sigma) + 1.0 / g2;
            let expect = (mm / sigma + mean0 / g2) / prec;
            assert!((post.mean[0] - expect).abs() < 1e-12);
            assert!((post.cov[0][0] - 1.0 / prec).abs() < 1e-12);
            let mle = sigma * mm / w;
            let wp = (1.0 / g2) / prec;
            let wd = (w / (sigma * sigma)) / prec;
            assert!((wp + wd - 1.0).abs() < 1e-12);
            assert!((post.mean[0] - (wp * mean0 + wd * mle)).abs() < 1e-12);
        }
    }

    #[test]
    fn covariance_trace_nonincreasing() {
        let (m, psi, mp) = setup(0.2, 3, 1.0, &[0.0, 1.0, 0.0, 0.0]);
        let prior = NormalPrior::isotropic(3, 0.0, 1.0).unwrap();
        let mut last = f64::INFINITY;
        for &t in psi.grid.points() {
            let post = normal_posterior(
                &prior,
                &gram_matrix(&psi, &m, t).unwrap(),
                &score_vector(&psi, &mp, t).unwrap(),
            )
            .unwrap();
            assert!(post.mse_trace <= last + 1e-14);
            last = post.mse_trace;
        }
    }

    #[test]
    fn full_posterior_pins_constant_term() {
        let (m, psi, mp) = setup(0.4, 1, 1.0, &[0.25, 1.0]);
        let prior = NormalPrior::new(vec![0.0, 0.0], vec![vec![1.0, 0.5], vec![0.5, 1.0]]).unwrap();
        let gram = gram_matrix(&psi, &m, 1.0).unwrap();
        let score = score_vector(&psi, &mp, 1.0).unwrap();
        let post = normal_posterior_full(&prior, &psi, &gram, &score, mp.xi0).unwrap();
        assert_eq!(post.mean[0], 0.25);
        assert_eq!(post.cov[0][0], 0.0);
        let (_, cond) = prior.condition_on(0, 0.25).unwrap();
        let direct = normal_posterior(&cond, &gram, &score).unwrap();
        assert!((post.mean[1] - direct.mean[0]).abs() < 1e-14);
        let json = post.to_json();
        assert!(json.contains("\"mse_trace\""));
    }

    #[test]
    fn cost_curve_scalar_brownian() {
        let m = HurstModel::new(0.5).unwrap();
        let g = TimeGrid::uniform(3.0, 30).unwrap();
        let basis = DriftBasis::polynomial(1, Sigma::Constant(1.0));
        let psi = psi_closed_poly(&m, &basis, &g).unwrap();
        // index 0 carries prior variance 2 throughout
        let prior = NormalPrior::isotropic(2, 0.0, 2.0).unwrap();
        let curve = normal_cost_curve(&prior, &psi, &m, 0.1, &g).unwrap();
        assert!((curve.f[0] - 4.0).abs() < 1e-14);
        for (t, f) in curve.t.iter().zip(&curve.f) {
            assert!((f - (0.1 * t + 2.0 + 1.0 / (t + 0.5))).abs() < 1e-12);
        }
        assert!(curve.to_csv().starts_with("t,F\n"));
    }

    #[test]
    fn free_observation_is_nonincreasing() {
        let m = HurstModel::new(0.3).unwrap();
        let g = TimeGrid::uniform(2.0, 50).unwrap();
        let psi = psi_closed_poly(&m, &DriftBasis::polynomial(2, Sigma::Constant(1.0)), &g).unwrap();
        let prior = NormalPrior::isotropic(3, 0.0, 1.0).unwrap();
        let curve = normal_cost_curve(&prior, &psi, &m, 0.0, &g).unwrap();
        assert!(curve.f.windows(2).all(|w| w[1] <= w[0] + 1e-15));
        let cost = NormalCost::new(&prior, &psi, &m, 1e-9).unwrap();
        let sol = normal_optimal_stop(&cost, &g, 1e-8).unwrap();
        assert!((sol.tau.unwrap() - 2.0).abs() < 1e-6);
    }

    #[test]
    fn expensive_observation_stops_at_zero() {
        let m = HurstModel::new(0.3).unwrap();
        let g = TimeGrid::uniform(1.0, 50).unwrap();
        let psi = psi_closed_poly(&m, &DriftBasis::polynomial(2, Sigma::Constant(1.0)), &g).unwrap();
        let prior = NormalPrior::isotropic(3, 0.0, 1.0).unwrap();
        let c = 3.0 / g.points()[1];
        let cost = NormalCost::new(&prior, &psi, &m, c).unwrap();
        let sol = normal_optimal_stop(&cost, &g, 1e-10).unwrap();
        assert_eq!(sol.tau, Some(0.0));
        assert!((sol.expected_cost - 3.0).abs() < 1e-14);
    }

    #[test]
    fn interior_minimum_is_unique_and_refined() {
        let m = HurstModel::new(0.2).unwrap();
        let g = TimeGrid::uniform(25.0, 250).unwrap();
        let psi = psi_closed_poly(&m, &DriftBasis::polynomial(2, Sigma::Constant(1.0)), &g).unwrap();
        let prior = NormalPrior::isotropic(3, 0.0, 1.0).unwrap();
        let cost = NormalCost::new(&prior, &psi, &m, 0.02).unwrap();
        let sol = normal_optimal_stop(&cost, &g, 1e-10).unwrap();
        let curve = sol.cost_curve.as_ref().unwrap();
        assert_eq!(curve.sign_changes(), 1);
        let tau = sol.tau.unwrap();
        assert!(tau > 9.0 && tau < 10.0);
        let h = 1e-5;
        assert!(cost.eval(tau) <= cost.eval(tau - h) && cost.eval(tau) <= cost.eval(tau + h));
        assert!(sol.expected_cost <= curve.f.iter().cloned().fold(f64::INFINITY, f64::min));
    }

    #[test]
    fn tabulated_cost_matches_closed() {
        let m = HurstModel::new(0.35).unwrap();
        let g = TimeGrid::uniform(1.0, 256).unwrap();
        let basis = DriftBasis::polynomial(2, Sigma::Constant(1.0));
        let pc = psi_closed_poly(&m, &basis, &g).unwrap();
        let pn = psi_numeric(&m, &basis, &g).unwrap();
        let prior = NormalPrior::isotropic(3, 0.0, 1.0).unwrap();
        let a = NormalCost::new(&prior, &pc, &m, 0.05).unwrap();
        let b = NormalCost::new(&prior, &pn, &m, 0.05).unwrap();
        for t in [0.0, 0.1, 0.37, 0.8, 1.0] {
            assert!((a.eval(t) - b.eval(t)).abs() < 2e-3, "t={t}: {} {}", a.eval(t), b.eval(t));
        }
    }
}
