use nalgebra::{DMatrix, DVector};

use super::prior::UniformPrior;
use crate::error::{Error, Result};
use crate::special::std_normal_interval;
use crate::transform::{log_likelihood_active, MartingalePath};

/// Truncated-normal posterior of a single linear-drift coefficient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformPosterior {
    pub estimate: f64,
    pub mse: f64,
    /// Normalizer Z = ∫ₐᵇ Λ(x) dx; may overflow to +∞ (see `log_z`).
    pub z: f64,
    pub log_z: f64,
}

/// Sum of signed terms given as (ln|x|, sign), returned in the same form.
fn signed_log_sum(terms: &[(f64, f64)]) -> (f64, f64) {
    let max = terms
        .iter()
        .filter(|(_, s)| *s != 0.0)
        .map(|(l, _)| *l)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return (f64::NEG_INFINITY, 0.0);
    }
    let acc: f64 = terms.iter().map(|(l, s)| s * (l - max).exp()).sum();
    if acc == 0.0 {
        (f64::NEG_INFINITY, 0.0)
    } else {
        (max + acc.abs().ln(), acc.signum())
    }
}

fn signed_ln(x: f64) -> (f64, f64) {
    (x.abs().ln(), if x == 0.0 { 0.0 } else { x.signum() })
}

/// Mean, variance and normalizer of the density ∝ Λ(x) = exp{P(xμ − x²/2)}
/// on [a, b], following the likelihood-ratio form with all products of Λ
/// and 1/Z taken in log space.
pub fn truncated_normal_moments(a: f64, b: f64, mu: f64, precision: f64) -> Result<UniformPosterior> {
    if !(a < b) {
        return Err(Error::Domain(format!("truncation interval needs a < b, got [{a}, {b}]")));
    }
    if !(precision > 0.0 && precision.is_finite()) {
        return Err(Error::NoInformation(precision));
    }
    let sp = precision.sqrt();
    let c = std_normal_interval((a - mu) * sp, (b - mu) * sp);
    if !(c > f64::MIN_POSITIVE) {
        let endpoint = if (mu - a).abs() <= (mu - b).abs() { a } else { b };
        return Err(Error::DegeneratePosterior { endpoint });
    }
    let log_lambda = |x: f64| {
        let theta = DVector::from_element(1, x);
        log_likelihood_active(&theta, &DMatrix::from_element(1, 1, precision), &DVector::from_element(1, precision * mu))
    };
    let log_z = 0.5 * (2.0 * std::f64::consts::PI / precision).ln() + 0.5 * mu * mu * precision + c.ln();
    let (la, lb) = (log_lambda(a), log_lambda(b));
    // [Λ(a) − Λ(b)] / (ZP)
    let (ld, sd) = signed_log_sum(&[(la, 1.0), (lb, -1.0)]);
    let shift = sd * (ld - log_z - precision.ln()).exp();
    let estimate = mu + shift;
    // [Λ(a)(a−μ) − Λ(b)(b−μ)] / (ZP)
    let (da, sa) = signed_ln(a - mu);
    let (db, sb) = signed_ln(b - mu);
    let (lm, sm) = signed_log_sum(&[(la + da, sa), (lb + db, -sb)]);
    let second = sm * (lm - log_z - precision.ln()).exp();
    let mse = (1.0 / precision + second - shift * shift).max(0.0);
    Ok(UniformPosterior {
        estimate,
        mse,
        z: log_z.exp(),
        log_z,
    })
}

/// Posterior of θ₁ ~ U[a, b] given dξ = θ₁dt + σdB^H observed on [0, t]:
/// precision P = w_H(t)/σ², location μ = σ·m^H_t.
pub fn uniform_posterior_n1(prior: &UniformPrior, mp: &MartingalePath, sigma: f64, t: f64) -> Result<UniformPosterior> {
    if prior.dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: prior.dim(),
        });
    }
    if !(sigma > 0.0) {
        return Err(Error::NonPositiveSigma { t, value: sigma });
    }
    let k = mp.grid.index_of(t)?;
    let w = mp.weight[k];
    if !(w > 0.0) {
        return Err(Error::NoInformation(t));
    }
    let mu = sigma * mp.martingale[k] / w;
    truncated_normal_moments(prior.lower()[0], prior.upper()[0], mu, w / (sigma * sigma))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{psi_closed_poly, DriftBasis, Sigma};
    use crate::fbm::{observation_from_sampler, FbmSampler, RngSeed, SimMethod};
    use crate::hurst::{HurstModel, TimeGrid};
    use crate::mle::mle_estimate;
    use crate::quad::integrate_adaptive;
    use crate::special::std_normal_pdf;
    use crate::transform::martingale_transform;
    use rand::{Rng, SeedableRng};

    fn textbook(a: f64, b: f64, mu: f64, p: f64) -> (f64, f64) {
        let s = 1.0 / p.sqrt();
        let (al, be) = ((a - mu) / s, (b - mu) / s);
        let c = std_normal_interval(al, be);
        let off = s * (std_normal_pdf(al) - std_normal_pdf(be)) / c;
        let var = s * s * (1.0 + (al * std_normal_pdf(al) - be * std_normal_pdf(be)) / c
            - ((std_normal_pdf(al) - std_normal_pdf(be)) / c).powi(2));
        (mu + off, var)
    }

    #[test]
    fn symmetric_case() {
        let p = truncated_normal_moments(-1.0, 3.0, 1.0, 2.5).unwrap();
        assert!((p.estimate - 1.0).abs() < 1e-15);
    }

    #[test]
    fn matches_textbook_form() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        for _ in 0..200 {
            let a = rng.random_range(-3.0..1.0);
            let b = a + rng.random_range(0.1..4.0);
            let mu = rng.random_range(a - 1.0..b + 1.0);
            let p = rng.random_range(0.05..20.0);
            let got = truncated_normal_moments(a, b, mu, p).unwrap();
            let (m, v) = textbook(a, b, mu, p);
            assert!((got.estimate - m).abs() <= 1e-12 * (1.0 + m.abs()), "{} {}", got.estimate, m);
            assert!((got.mse - v).abs() <= 1e-12 * (1.0 + v), "{} {}", got.mse, v);
        }
    }

    #[test]
    fn matches_adaptive_quadrature() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let a = rng.random_range(-2.0..0.5);
            let b = a + rng.random_range(0.5..3.0);
            let mu = rng.random_range(a - 0.5..b + 0.5);
            let p = rng.random_range(0.1..50.0);
            let got = truncated_normal_moments(a, b, mu, p).unwrap();
            let dens = |x: f64| (-0.5 * p * (x - mu).powi(2)).exp();
            let z = integrate_adaptive(dens, a, b, 1e-14);
            let mean = integrate_adaptive(|x| x * dens(x), a, b, 1e-14) / z;
            let var = integrate_adaptive(|x| (x - mean).powi(2) * dens(x), a, b, 1e-14) / z;
            assert!((got.estimate - mean).abs() <= 1e-8 * mean.abs().max(1e-3), "{} {mean}", got.estimate);
            assert!((got.mse - var).abs() <= 1e-8 * var, "{} {var}", got.mse);
            let lz = z.ln() + 0.5 * p * mu * mu;
            assert!((got.log_z - lz).abs() < 1e-10);
            assert!(got.estimate > a && got.estimate < b);
            assert!(got.mse <= (b - a).powi(2) / 4.0);
        }
    }

    #[test]
    fn wide_box_limit_is_mle() {
        let mu = 0.7;
        let p: f64 = 3.0;
        let r = 40.0 / p.sqrt();
        let got = truncated_normal_moments(mu - r, mu + r, mu, p).unwrap();
        assert!((got.estimate - mu).abs() < 1e-14);
        assert!((got.mse - 1.0 / p).abs() < 1e-14);
        // large-normalizer regime stays finite in log space
        let big = truncated_normal_moments(0.0, 2.0, 1.2, 1e4).unwrap();
        assert!(big.z.is_infinite() && big.log_z.is_finite());
        assert!((big.estimate - 1.2).abs() < 1e-12 && (big.mse - 1e-4).abs() < 1e-12);
    }

    #[test]
    fn far_outside_is_degenerate() {
        match truncated_normal_moments(0.0, 1.0, 100.0, 1e4) {
            Err(Error::DegeneratePosterior { endpoint }) => assert_eq!(endpoint, 1.0),
            other => panic!("{other:?}"),
        }
        assert!(truncated_normal_moments(1.0, 1.0, 0.0, 1.0).is_err());
        assert!(truncated_normal_moments(0.0, 1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn from_path_matches_mle_for_wide_box() {
        let m = HurstModel::new(0.3).unwrap();
        let g = TimeGrid::uniform(1.0, 64).unwrap();
        let sigma = 0.5;
        let basis = DriftBasis::polynomial(1, Sigma::Constant(sigma));
        let sampler = FbmSampler::new(&m, &g, SimMethod::Cholesky).unwrap();
        let xi = observation_from_sampler(&[0.0, 0.8], &basis, &sampler, RngSeed::new(4, 2)).unwrap();
        let mp = martingale_transform(&xi, &basis.sigma, &m).unwrap();
        let psi = psi_closed_poly(&m, &basis, &g).unwrap();
        let mle = mle_estimate(&psi, &mp, 1.0).unwrap().theta_hat[1];
        let prior = UniformPrior::interval(-1e3, 1e3).unwrap();
        let post = uniform_posterior_n1(&prior, &mp, sigma, 1.0).unwrap();
        assert!((post.estimate - mle).abs() < 1e-10);
        assert!((post.mse - sigma * sigma / m.weight_w(1.0)).abs() < 1e-12);
        assert!(matches!(uniform_posterior_n1(&prior, &mp, sigma, 0.0), Err(Error::NoInformation(_))));
    }
}
