//! Monte Carlo experiments with reproducible per-replication streams.
//!
//! Replication r always draws from `RngSeed::new(base_seed, r)`, and the
//! per-replication results are reduced in replication order, so reports do
//! not depend on the number of worker threads.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::basis::{psi_closed_poly, psi_numeric, DriftBasis, PsiEvaluations};
use crate::bayes::{normal_optimal_stop, NormalCost, NormalPrior, StoppingPolicy, StoppingSolution, UniformPrior};
use crate::bayes::truncated_normal_moments;
use crate::error::{Error, Result};
use crate::fbm::{observation_from_sampler, FbmSampler, RngSeed, SimMethod};
use crate::hurst::{HurstModel, TimeGrid};
use crate::io::fmt_f64;
use crate::mle::{gram_matrix, mle_estimate};
use crate::transform::TransformPlan;

/// How ψ is evaluated for the estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PsiRoute {
    #[default]
    Closed,
    Numeric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    /// θ̂ at the horizon; reports mean, bias, variance and MSE per index.
    Mle,
    /// Terminal value of the martingale; reports its mean and variance.
    Bracket,
}

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub scenario: String,
    pub model: HurstModel,
    pub basis: DriftBasis,
    pub grid: TimeGrid,
    pub theta: Vec<f64>,
    pub estimator: EstimatorKind,
    pub psi: PsiRoute,
    pub method: SimMethod,
    pub replications: u64,
    pub base_seed: u64,
    /// Statistic names to keep; empty keeps all.
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub scenario: String,
    pub statistic: String,
    pub value: f64,
    pub se: f64,
    pub n_reps: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McReport {
    pub rows: Vec<ReportRow>,
    /// (replication, error message) for every failed replication.
    pub failures: Vec<(u64, String)>,
}

impl McReport {
    /// CSV with header `scenario,statistic,value,se,n_reps`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("scenario,statistic,value,se,n_reps\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.scenario,
                r.statistic,
                fmt_f64(r.value),
                fmt_f64(r.se),
                r.n_reps
            ));
        }
        out
    }

    pub fn get(&self, statistic: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.statistic == statistic)
    }
}

/// Sample mean and its standard error (0 for a single observation).
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Unbiased sample variance and a large-sample standard error for it.
pub fn variance_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / n;
    let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    let var = m2 * n / (n - 1.0);
    (var, ((m4 - m2 * m2).max(0.0) / n).sqrt())
}

struct Prepared {
    sampler: FbmSampler,
    plan: TransformPlan,
    psi: Option<PsiEvaluations>,
}

fn prepare(spec: &ExperimentSpec) -> Result<Prepared> {
    if spec.replications == 0 {
        return Err(Error::Domain("replications must be >= 1".into()));
    }
    if spec.theta.len() != spec.basis.dimension() {
        return Err(Error::DimensionMismatch {
            expected: spec.basis.dimension(),
            got: spec.theta.len(),
        });
    }
    let sampler = FbmSampler::new(&spec.model, &spec.grid, spec.method)?;
    let plan = TransformPlan::new(&spec.model, &spec.grid, &spec.basis.sigma)?;
    let psi = match spec.estimator {
        EstimatorKind::Mle => Some(match spec.psi {
            PsiRoute::Closed => psi_closed_poly(&spec.model, &spec.basis, &spec.grid)?,
            PsiRoute::Numeric => psi_numeric(&spec.model, &spec.basis, &spec.grid)?,
        }),
        EstimatorKind::Bracket => None,
    };
    Ok(Prepared { sampler, plan, psi })
}

fn replicate(spec: &ExperimentSpec, prep: &Prepared, r: u64) -> Result<Vec<f64>> {
    let xi = observation_from_sampler(&spec.theta, &spec.basis, &prep.sampler, RngSeed::new(spec.base_seed, r))?;
    let mp = prep.plan.apply(&xi)?;
    match &prep.psi {
        Some(psi) => Ok(mle_estimate(psi, &mp, spec.grid.horizon())?.theta_hat),
        None => Ok(vec![*mp.martingale.last().expect("grid has points")]),
    }
}

/// Runs every replication (in parallel) and summarizes them. Aborts when
/// more than 1% of replications fail; otherwise failed replications are
/// listed and excluded.
pub fn run_mc(spec: &ExperimentSpec) -> Result<McReport> {
    let prep = prepare(spec)?;
    let results: Vec<Result<Vec<f64>>> = (0..spec.replications)
        .into_par_iter()
        .map(|r| {
            replicate(spec, &prep, r).map_err(|e| Error::Replication {
                replication: r,
                source: Box::new(e),
            })
        })
        .collect();
    let mut ok = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for (r, res) in results.into_iter().enumerate() {
        match res {
            Ok(v) => ok.push(v),
            Err(e) => failures.push((r as u64, e.to_string())),
        }
    }
    if failures.len() as f64 > 0.01 * spec.replications as f64 || ok.is_empty() {
        return Err(Error::TooManyFailures {
            failed: failures.len(),
            total: spec.replications as usize,
            first: failures.first().map(|f| f.1.clone()).unwrap_or_default(),
        });
    }
    let n = ok.len() as u64;
    let mut rows = Vec::new();
    let mut push = |statistic: String, value: f64, se: f64| {
        rows.push(ReportRow {
            scenario: spec.scenario.clone(),
            statistic,
            value,
            se,
            n_reps: n,
        })
    };
    match spec.estimator {
        EstimatorKind::Mle => {
            let psi = prep.psi.as_ref().expect("mle prepares ψ");
            let gram = gram_matrix(psi, &spec.model, spec.grid.horizon())?;
            let info = gram.r.clone().cholesky().ok_or_else(|| Error::IllConditioned {
                basis: "Gram matrix at the horizon".into(),
                condition: gram.condition_estimate,
            })?;
            let inv = info.inverse();
            for i in 0..spec.theta.len() {
                let xs: Vec<f64> = ok.iter().map(|v| v[i]).collect();
                let (m, se) = mean_se(&xs);
                push(format!("theta_{i}.mean"), m, se);
                push(format!("theta_{i}.bias"), m - spec.theta[i], se);
                let (v, vse) = variance_se(&xs);
                push(format!("theta_{i}.variance"), v, vse);
                let sq: Vec<f64> = xs.iter().map(|x| (x - spec.theta[i]).powi(2)).collect();
                let (mse, mse_se) = mean_se(&sq);
                push(format!("theta_{i}.mse"), mse, mse_se);
            }
            let total: Vec<f64> = ok
                .iter()
                .map(|v| v.iter().zip(&spec.theta).map(|(x, t)| (x - t).powi(2)).sum())
                .collect();
            let (tm, tse) = mean_se(&total);
            push("mse_total".into(), tm, tse);
            push("fisher_trace_inverse".into(), inv.trace(), 0.0);
        }
        EstimatorKind::Bracket => {
            let xs: Vec<f64> = ok.iter().map(|v| v[0]).collect();
            let (m, se) = mean_se(&xs);
            push("M_T.mean".into(), m, se);
            let (v, vse) = variance_se(&xs);
            push("M_T.variance".into(), v, vse);
            push("w_T".into(), spec.model.weight_w(spec.grid.horizon()), 0.0);
        }
    }
    push("failures".into(), failures.len() as f64, 0.0);
    if !spec.outputs.is_empty() {
        rows.retain(|r| spec.outputs.iter().any(|o| r.statistic == *o || r.statistic.ends_with(&format!(".{o}"))));
    }
    Ok(McReport { rows, failures })
}

/// Monte Carlo estimate of E[ctₖ + γ_{tₖ}] for every grid time under the
/// uniform prior, with θ ~ U[a, b] and M_{tₖ} ~ N(θw/σ, w) drawn exactly.
/// The same draws are reused across times.
pub fn fixed_time_uniform_costs(
    prior: &UniformPrior,
    model: &HurstModel,
    sigma: f64,
    c: f64,
    grid: &TimeGrid,
    paths: u64,
    seed: u64,
) -> Result<Vec<(f64, f64, f64)>> {
    let (a, b) = (prior.lower()[0], prior.upper()[0]);
    let draws: Vec<(f64, f64)> = (0..paths)
        .map(|p| {
            let mut rng = RngSeed::new(seed, p).rng();
            let theta = if a == b { a } else { rng.random_range(a..b) };
            let z: f64 = rng.sample(StandardNormal);
            (theta, z)
        })
        .collect();
    grid.points()
        .par_iter()
        .map(|&t| {
            let w = model.weight_w(t);
            let costs = draws
                .iter()
                .map(|&(theta, z)| {
                    if w == 0.0 || a == b {
                        return Ok(c * t + prior.variances()[0]);
                    }
                    let m = theta * w / sigma + w.sqrt() * z;
                    Ok(c * t + truncated_normal_moments(a, b, sigma * m / w, w / (sigma * sigma))?.mse)
                })
                .collect::<Result<Vec<f64>>>()?;
            let (m, se) = mean_se(&costs);
            Ok((t, m, se))
        })
        .collect()
}

/// Monte Carlo cost E[cτ + γ_τ] of a lattice policy, simulating M with
/// independent Gaussian increments given θ ~ U[a, b].
pub fn evaluate_policy_mc(
    policy: &StoppingPolicy,
    prior: &UniformPrior,
    model: &HurstModel,
    sigma: f64,
    c: f64,
    paths: u64,
    seed: u64,
) -> Result<(f64, f64)> {
    let (a, b) = (prior.lower()[0], prior.upper()[0]);
    let w: Vec<f64> = policy.times.iter().map(|&t| model.weight_w(t)).collect();
    let costs = (0..paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = RngSeed::new(seed, p).rng();
            let theta = if a == b { a } else { rng.random_range(a..b) };
            let mut m = 0.0;
            for k in 0..policy.times.len() {
                if k > 0 {
                    let dw = w[k] - w[k - 1];
                    let z: f64 = rng.sample(StandardNormal);
                    m += theta * dw / sigma + dw.sqrt() * z;
                }
                if policy.stops(k, m) {
                    let gamma = if w[k] == 0.0 || a == b {
                        prior.variances()[0]
                    } else {
                        truncated_normal_moments(a, b, sigma * m / w[k], w[k] / (sigma * sigma))?.mse
                    };
                    return Ok(c * policy.times[k] + gamma);
                }
            }
            unreachable!("the policy always stops at the horizon")
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(mean_se(&costs))
}

/// Cost curve F_H and its minimizer for a polynomial basis with normal
/// prior.
#[derive(Debug, Clone)]
pub struct CostFigure {
    pub solution: StoppingSolution,
    /// Exactly one sign change of the forward difference and the
    /// minimizer strictly inside (0, T).
    pub unique_interior_minimum: bool,
}

pub fn reproduce_cost_figure(
    model: &HurstModel,
    degree: usize,
    sigma: f64,
    c: f64,
    prior: &NormalPrior,
    grid: &TimeGrid,
) -> Result<CostFigure> {
    let basis = DriftBasis::polynomial(degree, crate::basis::Sigma::Constant(sigma));
    let psi = psi_closed_poly(model, &basis, grid)?;
    let cost = NormalCost::new(prior, &psi, model, c)?;
    let solution = normal_optimal_stop(&cost, grid, 1e-10 * grid.horizon())?;
    let curve = solution.cost_curve.as_ref().expect("normal stopping samples the curve");
    let tau = solution.tau.expect("normal stopping time is deterministic");
    let unique_interior_minimum = curve.sign_changes() == 1 && tau > 0.0 && tau < grid.horizon();
    Ok(CostFigure {
        solution,
        unique_interior_minimum,
    })
}
