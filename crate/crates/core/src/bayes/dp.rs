use rayon::prelude::*;

use super::prior::UniformPrior;
use super::uniform::truncated_normal_moments;
use super::StoppingSolution;
use crate::error::{Error, Result};
use crate::hurst::{HurstModel, TimeGrid};
use crate::io::fmt_f64;
use crate::quad::{gauss_hermite_normal, gauss_legendre_on};

/// Discretization of the statistic M and of the transition integral.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LatticeSpec {
    /// Statistic nodes per time slice.
    pub bins: usize,
    pub hermite_nodes: usize,
    pub legendre_nodes: usize,
    /// Half-width of each slice beyond the drift range, in units of √w.
    pub width_sd: f64,
}

impl Default for LatticeSpec {
    fn default() -> Self {
        Self {
            bins: 201,
            hermite_nodes: 15,
            legendre_nodes: 33,
            width_sd: 6.0,
        }
    }
}

impl LatticeSpec {
    fn validate(&self) -> Result<()> {
        if self.hermite_nodes < 3 {
            return Err(Error::LatticeTooCoarse(format!(
                "{} Gauss-Hermite nodes, need at least 3",
                self.hermite_nodes
            )));
        }
        if self.bins < 51 {
            return Err(Error::LatticeTooCoarse(format!("{} statistic bins, need at least 51", self.bins)));
        }
        if self.legendre_nodes < 2 {
            return Err(Error::LatticeTooCoarse(format!(
                "{} Gauss-Legendre nodes, need at least 2",
                self.legendre_nodes
            )));
        }
        if !(self.width_sd > 0.0) {
            return Err(Error::LatticeTooCoarse(format!("lattice width {} must be > 0", self.width_sd)));
        }
        Ok(())
    }
}

/// Stop/continue decisions on the (tₖ, M) lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct StoppingPolicy {
    pub times: Vec<f64>,
    /// Statistic nodes per time slice (a single node M = 0 at t = 0).
    pub nodes: Vec<Vec<f64>>,
    pub stop: Vec<Vec<bool>>,
    pub value: Vec<Vec<f64>>,
    /// γ − continuation value; stop where ≤ 0.
    margin: Vec<Vec<f64>>,
}

fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if xs.len() == 1 || x <= xs[0] {
        return ys[0];
    }
    let n = xs.len();
    if x >= xs[n - 1] {
        return ys[n - 1];
    }
    let h = (xs[n - 1] - xs[0]) / (n - 1) as f64;
    let j = (((x - xs[0]) / h) as usize).min(n - 2);
    let u = (x - xs[j]) / h;
    ys[j] * (1.0 - u) + ys[j + 1] * u
}

impl StoppingPolicy {
    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("policy has at least one slice")
    }

    /// Decision at slice `k` for statistic `m`, interpolating the margin.
    pub fn stops(&self, k: usize, m: f64) -> bool {
        k + 1 == self.times.len() || interp(&self.nodes[k], &self.margin[k], m) <= 0.0
    }

    /// First grid time at which the policy says stop along a path of M.
    pub fn first_entry(&self, martingale: &[f64]) -> f64 {
        (0..self.times.len())
            .find(|&k| self.stops(k, martingale[k]))
            .map_or(self.horizon(), |k| self.times[k])
    }

    /// CSV with header `t,M,action`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,M,action\n");
        for (k, t) in self.times.iter().enumerate() {
            for (m, s) in self.nodes[k].iter().zip(&self.stop[k]) {
                let action = if *s { "stop" } else { "continue" };
                out.push_str(&format!("{},{},{action}\n", fmt_f64(*t), fmt_f64(*m)));
            }
        }
        out
    }
}

/// Statistic nodes at weight w: the range of σ⁻¹θw for θ ∈ [a, b],
/// widened by `width_sd`·√w on both sides.
fn slice_nodes(a: f64, b: f64, sigma: f64, w: f64, spec: &LatticeSpec) -> Vec<f64> {
    if w == 0.0 {
        return vec![0.0];
    }
    let lo = a * w / sigma - spec.width_sd * w.sqrt();
    let hi = b * w / sigma + spec.width_sd * w.sqrt();
    let n = spec.bins;
    (0..n).map(|j| lo + (hi - lo) * j as f64 / (n - 1) as f64).collect()
}

/// Posterior quadrature for θ: nodes and normalized weights. Nodes cover
/// [a, b] intersected with the region that carries the posterior mass.
fn theta_rule(a: f64, b: f64, sigma: f64, w: f64, m: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
    if w == 0.0 {
        let (x, wt) = gauss_legendre_on(n, a, b);
        let s: f64 = wt.iter().sum();
        return (x, wt.into_iter().map(|v| v / s).collect());
    }
    let p = w / (sigma * sigma);
    let mu = sigma * m / w;
    let reach = 8.0 / p.sqrt();
    let lo = a.max(mu.min(b) - reach);
    let hi = b.min(mu.max(a) + reach);
    let (x, wt) = gauss_legendre_on(n, lo, hi);
    let logs: Vec<f64> = x.iter().map(|t| -0.5 * p * (t - mu).powi(2)).collect();
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = wt.iter().zip(&logs).map(|(v, l)| v * (l - max).exp()).collect();
    let s: f64 = raw.iter().sum();
    (x, raw.into_iter().map(|v| v / s).collect())
}

/// γ at (w, M): posterior variance, the prior variance at w = 0.
fn terminal_mse(a: f64, b: f64, sigma: f64, w: f64, m: f64) -> Result<f64> {
    if w == 0.0 {
        return Ok((b - a).powi(2) / 12.0);
    }
    Ok(truncated_normal_moments(a, b, sigma * m / w, w / (sigma * sigma))?.mse)
}

/// Backward induction for inf_τ E[cτ + γ_τ] with θ ~ U[a, b], n = 1.
/// The state is (tₖ, M) with M the martingale statistic; given θ the
/// increment M′ − M is N(θΔw/σ, Δw).
pub fn uniform_stop_dp(
    prior: &UniformPrior,
    model: &HurstModel,
    sigma: f64,
    c: f64,
    grid: &TimeGrid,
    spec: &LatticeSpec,
) -> Result<StoppingSolution> {
    spec.validate()?;
    if prior.dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: prior.dim(),
        });
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::Domain(format!("observation cost must be > 0, got {c}")));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::NonPositiveSigma { t: 0.0, value: sigma });
    }
    let (a, b) = (prior.lower()[0], prior.upper()[0]);
    let times = grid.points().to_vec();
    let kk = times.len() - 1;
    let w: Vec<f64> = times.iter().map(|&t| model.weight_w(t)).collect();

    if a == b {
        let nodes: Vec<Vec<f64>> = w.iter().map(|&wk| slice_nodes(a, b, sigma, wk, spec)).collect();
        let zeros: Vec<Vec<f64>> = nodes.iter().map(|n| vec![0.0; n.len()]).collect();
        let policy = StoppingPolicy {
            times,
            stop: nodes.iter().map(|n| vec![true; n.len()]).collect(),
            margin: zeros.clone(),
            value: zeros,
            nodes,
        };
        return Ok(StoppingSolution {
            tau: Some(0.0),
            expected_cost: 0.0,
            cost_curve: None,
            policy: Some(policy),
        });
    }

    let (gh_x, gh_w) = gauss_hermite_normal(spec.hermite_nodes);
    let nodes: Vec<Vec<f64>> = w.iter().map(|&wk| slice_nodes(a, b, sigma, wk, spec)).collect();
    let mut value = vec![Vec::new(); kk + 1];
    let mut margin = vec![Vec::new(); kk + 1];
    let mut stop = vec![Vec::new(); kk + 1];

    value[kk] = nodes[kk]
        .par_iter()
        .map(|&m| terminal_mse(a, b, sigma, w[kk], m))
        .collect::<Result<Vec<f64>>>()?;
    margin[kk] = vec![f64::NEG_INFINITY; nodes[kk].len()];
    stop[kk] = vec![true; nodes[kk].len()];

    for k in (0..kk).rev() {
        let dw = w[k + 1] - w[k];
        let dt = times[k + 1] - times[k];
        let sd = dw.sqrt();
        let (next_nodes, next_value) = (&nodes[k + 1], &value[k + 1]);
        let rows = nodes[k]
            .par_iter()
            .map(|&m| -> Result<(f64, f64)> {
                let gamma = terminal_mse(a, b, sigma, w[k], m)?;
                let (tx, tw) = theta_rule(a, b, sigma, w[k], m, spec.legendre_nodes);
                let mut cont = 0.0;
                for (th, pw) in tx.iter().zip(&tw) {
                    let drift = m + th * dw / sigma;
                    let mut inner = 0.0;
                    for (z, hw) in gh_x.iter().zip(&gh_w) {
                        inner += hw * interp(next_nodes, next_value, drift + sd * z);
                    }
                    cont += pw * inner;
                }
                cont += c * dt;
                Ok((gamma, cont))
            })
            .collect::<Result<Vec<(f64, f64)>>>()?;
        value[k] = rows.iter().map(|(g, cn)| g.min(*cn)).collect();
        margin[k] = rows.iter().map(|(g, cn)| g - cn).collect();
        stop[k] = rows.iter().map(|(g, cn)| g <= cn).collect();
    }

    let expected_cost = value[0][0];
    let tau = if stop[0][0] { Some(0.0) } else { None };
    Ok(StoppingSolution {
        tau,
        expected_cost,
        cost_curve: None,
        policy: Some(StoppingPolicy {
            times,
            nodes,
            stop,
            value,
            margin,
        }),
    })
}
