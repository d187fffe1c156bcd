//! Fractional Brownian motion sample paths and the observation process
//! ξ = Σθᵢφᵢ + σB^H.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::basis::DriftBasis;
use crate::error::{Error, Result};
use crate::hurst::{HurstModel, TimeGrid};
use crate::io::{fmt_f64, parse_csv_table};

/// Seed for a reproducible random stream. Distinct `stream_id`s give
/// independent ChaCha20 streams under the same `seed`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngSeed {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngSeed {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    pub fn with_stream(self, stream_id: u64) -> Self {
        Self { stream_id, ..self }
    }

    pub fn rng(&self) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// Process values on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePath {
    pub grid: TimeGrid,
    pub values: Vec<f64>,
}

impl SamplePath {
    pub fn new(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                got: values.len(),
            });
        }
        Ok(Self { grid, values })
    }

    pub fn last(&self) -> f64 {
        *self.values.last().expect("path is nonempty")
    }

    /// CSV with header `t,value`, 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,value\n");
        for (t, v) in self.grid.points().iter().zip(&self.values) {
            out.push_str(&fmt_f64(*t));
            out.push(',');
            out.push_str(&fmt_f64(*v));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let cols = parse_csv_table(text, &["t", "value"])?;
        let grid = TimeGrid::new(cols[0].clone())?;
        Self::new(grid, cols[1].clone())
    }
}

/// Cov(B^H_s, B^H_t) = ½(s^{2H} + t^{2H} − |t−s|^{2H}).
pub fn fbm_covariance(model: &HurstModel, s: f64, t: f64) -> f64 {
    let two_h = 2.0 * model.h();
    let p = |x: f64| if x == 0.0 { 0.0 } else { x.abs().powf(two_h) };
    0.5 * (p(s) + p(t) - p(t - s))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SimMethod {
    #[default]
    Cholesky,
    Hosking,
}

/// Largest grid (in steps) accepted by the dense Cholesky sampler.
pub const CHOLESKY_MAX_STEPS: usize = 4096;

/// Lower-triangular Cholesky factor, packed by rows. On failure reports
/// the offending pivot.
fn cholesky_packed(n: usize, cov: impl Fn(usize, usize) -> f64) -> std::result::Result<Vec<f64>, usize> {
    let idx = |i: usize, j: usize| i * (i + 1) / 2 + j;
    let mut l = vec![0.0; n * (n + 1) / 2];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = cov(i, j);
            let (ri, rj) = (idx(i, 0), idx(j, 0));
            for k in 0..j {
                sum -= l[ri + k] * l[rj + k];
            }
            if i == j {
                if !(sum > 0.0) {
                    return Err(i);
                }
                l[ri + i] = sum.sqrt();
            } else {
                l[ri + j] = sum / l[rj + j];
            }
        }
    }
    Ok(l)
}

/// Reusable FBM sampler for a fixed (model, grid, method): the expensive
/// factorization is done once and each path costs O(N²).
#[derive(Debug, Clone)]
pub struct FbmSampler {
    grid: TimeGrid,
    kind: SamplerKind,
}

#[derive(Debug, Clone)]
enum SamplerKind {
    Trivial,
    Cholesky { factor: Vec<f64> },
    Hosking { phi: Vec<Vec<f64>>, sd: Vec<f64> },
}

impl FbmSampler {
    pub fn new(model: &HurstModel, grid: &TimeGrid, method: SimMethod) -> Result<Self> {
        let n = grid.len() - 1;
        if n == 0 {
            return Ok(Self {
                grid: grid.clone(),
                kind: SamplerKind::Trivial,
            });
        }
        let kind = match method {
            SimMethod::Cholesky => {
                if n > CHOLESKY_MAX_STEPS {
                    return Err(Error::InvalidGrid(format!(
                        "Cholesky sampler supports at most {CHOLESKY_MAX_STEPS} steps, got {n}"
                    )));
                }
                let pts = &grid.points()[1..];
                let cov = |i: usize, j: usize| fbm_covariance(model, pts[i], pts[j]);
                let factor = match cholesky_packed(n, cov) {
                    Ok(l) => l,
                    Err(_) => {
                        let jitter = 1e-12 * grid.horizon().powf(2.0 * model.h());
                        cholesky_packed(n, |i, j| cov(i, j) + if i == j { jitter } else { 0.0 })
                            .map_err(|pivot| Error::Factorization { pivot })?
                    }
                };
                SamplerKind::Cholesky { factor }
            }
            SimMethod::Hosking => {
                if !grid.is_uniform() {
                    return Err(Error::InvalidGrid("Hosking method needs a uniform grid".into()));
                }
                let (phi, sd) = hosking_coefficients(model, grid.horizon() / n as f64, n);
                SamplerKind::Hosking { phi, sd }
            }
        };
        Ok(Self {
            grid: grid.clone(),
            kind,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn sample(&self, seed: RngSeed) -> SamplePath {
        let n = self.grid.len() - 1;
        let mut rng = seed.rng();
        let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut values = vec![0.0; n + 1];
        match &self.kind {
            SamplerKind::Trivial => {}
            SamplerKind::Cholesky { factor } => {
                for i in 0..n {
                    let row = &factor[i * (i + 1) / 2..i * (i + 1) / 2 + i + 1];
                    values[i + 1] = row.iter().zip(&z).map(|(l, z)| l * z).sum();
                }
            }
            SamplerKind::Hosking { phi, sd } => {
                let mut incr = vec![0.0; n];
                for k in 0..n {
                    let mean: f64 = phi[k].iter().enumerate().map(|(j, p)| p * incr[k - 1 - j]).sum();
                    incr[k] = mean + sd[k] * z[k];
                    values[k + 1] = values[k] + incr[k];
                }
            }
        }
        SamplePath {
            grid: self.grid.clone(),
            values,
        }
    }
}

/// Durbin–Levinson coefficients for fractional Gaussian noise with step
/// `dt`: increment k has conditional mean Σⱼ phi[k][j]·X_{k−1−j} and
/// conditional standard deviation sd[k].
fn hosking_coefficients(model: &HurstModel, dt: f64, n: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let two_h = 2.0 * model.h();
    let scale = dt.powf(two_h);
    let gamma = |k: usize| {
        let k = k as f64;
        0.5 * scale * ((k + 1.0).powf(two_h) - 2.0 * k.powf(two_h) + (k - 1.0).abs().powf(two_h))
    };
    let mut phis = Vec::with_capacity(n);
    let mut sds = Vec::with_capacity(n);
    let mut phi: Vec<f64> = Vec::new();
    let mut v = gamma(0);
    phis.push(Vec::new());
    sds.push(v.sqrt());
    for k in 1..n {
        let num = gamma(k) - phi.iter().enumerate().map(|(j, p)| p * gamma(k - 1 - j)).sum::<f64>();
        let refl = num / v;
        let mut next = vec![0.0; k];
        for j in 0..k - 1 {
            next[j] = phi[j] - refl * phi[k - 2 - j];
        }
        next[k - 1] = refl;
        v *= 1.0 - refl * refl;
        phi = next;
        phis.push(phi.clone());
        sds.push(v.sqrt());
    }
    (phis, sds)
}

/// One standard FBM path on `grid`.
pub fn simulate_fbm(
    model: &HurstModel,
    grid: &TimeGrid,
    seed: RngSeed,
    method: SimMethod,
) -> Result<SamplePath> {
    Ok(FbmSampler::new(model, grid, method)?.sample(seed))
}

/// Deterministic drift Σθᵢφᵢ(t) on the grid.
pub fn drift_path(theta: &[f64], basis: &DriftBasis, grid: &TimeGrid) -> Result<Vec<f64>> {
    if theta.len() != basis.dimension() {
        return Err(Error::DimensionMismatch {
            expected: basis.dimension(),
            got: theta.len(),
        });
    }
    Ok(grid
        .points()
        .iter()
        .map(|&t| theta.iter().enumerate().map(|(i, th)| th * basis.phi(i, t)).sum())
        .collect())
}

/// ξ(t) = Σθᵢφᵢ(t) + σ B^H(t) for a constant σ, using a fresh FBM path.
pub fn simulate_observation(
    theta: &[f64],
    basis: &DriftBasis,
    model: &HurstModel,
    grid: &TimeGrid,
    seed: RngSeed,
) -> Result<SamplePath> {
    let sampler = FbmSampler::new(model, grid, SimMethod::Cholesky)?;
    observation_from_sampler(theta, basis, &sampler, seed)
}

/// As [`simulate_observation`] with a prepared sampler.
pub fn observation_from_sampler(
    theta: &[f64],
    basis: &DriftBasis,
    sampler: &FbmSampler,
    seed: RngSeed,
) -> Result<SamplePath> {
    let sigma = basis.sigma.constant().ok_or_else(|| {
        Error::Domain("additive observation form needs constant σ".into())
    })?;
    if sigma < 0.0 || !sigma.is_finite() {
        return Err(Error::NonPositiveSigma { t: 0.0, value: sigma });
    }
    let drift = drift_path(theta, basis, sampler.grid())?;
    let noise = if sigma == 0.0 {
        vec![0.0; drift.len()]
    } else {
        sampler.sample(seed).values
    };
    let values = drift.iter().zip(&noise).map(|(d, b)| d + sigma * b).collect();
    SamplePath::new(sampler.grid().clone(), values)
}
