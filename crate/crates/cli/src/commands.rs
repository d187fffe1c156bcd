use std::path::Path;

use anyhow::Result;
use fbm_drift::basis::{psi_closed_poly, psi_numeric, BasisKind, PsiEvaluations};
use fbm_drift::bayes::{
    normal_optimal_stop, normal_posterior, normal_posterior_full, quadrature_posterior_oracle, uniform_posterior_n1,
    uniform_stop_dp, NormalCost, NormalPrior, Prior, UniformPrior,
};
use fbm_drift::fbm::{observation_from_sampler, FbmSampler, RngSeed, SamplePath};
use fbm_drift::harness::{run_mc, EstimatorKind, ExperimentSpec, PsiRoute};
use fbm_drift::mle::{estimate_trajectory, gram_matrix, mle_estimate, score_vector};
use fbm_drift::transform::{martingale_transform, MartingalePath};
use serde_json::{json, Value};

use crate::config::{ConfigError, RunConfig, Setup};
use crate::output::{Format, Outputs, Table};

/// Stream used for the single observation path of simulate/estimate.
const PATH_STREAM: u64 = 0;

pub struct Ctx<'a> {
    pub cfg: &'a RunConfig,
    pub base: &'a Path,
    pub seed: Option<u64>,
    pub format: Format,
}

pub struct Run {
    pub outputs: Outputs,
    pub stdout: String,
    /// Set when the command ran but its check did not pass (exit 1).
    pub failed: Option<String>,
}

impl Run {
    fn new(outputs: Outputs, stdout: String) -> Self {
        Self {
            outputs,
            stdout,
            failed: None,
        }
    }
}

fn simulate_path(ctx: &Ctx, s: &Setup) -> Result<SamplePath> {
    let theta = ctx.cfg.theta(s)?;
    let seed = ctx.cfg.seed(ctx.seed)?;
    let sampler = FbmSampler::new(&s.model, &s.grid, s.method)?;
    Ok(observation_from_sampler(&theta, &s.basis, &sampler, RngSeed::new(seed, PATH_STREAM))?)
}

/// Observation path: `options.input` if given, otherwise simulated.
fn observation(ctx: &Ctx, s: &Setup) -> Result<SamplePath> {
    match &ctx.cfg.options.input {
        Some(p) => {
            let path = ctx.base.join(p);
            let text = std::fs::read_to_string(&path)
                .map_err(|e| ConfigError::new("options.input", format!("cannot read {}: {e}", path.display())))?;
            SamplePath::from_csv(&text).map_err(|e| ConfigError::new("options.input", e.to_string()).into())
        }
        None => simulate_path(ctx, s),
    }
}

fn psi_for(ctx: &Ctx, s: &Setup, xi: &SamplePath) -> Result<PsiEvaluations> {
    Ok(match ctx.cfg.psi_route(s)? {
        PsiRoute::Closed => psi_closed_poly(&s.model, &s.basis, &xi.grid)?,
        PsiRoute::Numeric => psi_numeric(&s.model, &s.basis, &xi.grid)?,
    })
}

fn path_table(xi: &SamplePath) -> Table {
    Table::new()
        .num("t", xi.grid.points().to_vec())
        .num("value", xi.values.clone())
}

fn martingale_table(mp: &MartingalePath) -> Table {
    let ratio = fbm_drift::transform::innovation_ratio(mp);
    Table::new()
        .num("t", mp.grid.points().to_vec())
        .num("M", mp.martingale.clone())
        .num("w", mp.weight.clone())
        .num("m", ratio)
}

/// Standardized increments of ξ minus its drift; ≈ N(0,1) marginals.
fn increment_summary(xi: &SamplePath, s: &Setup, theta: &[f64]) -> String {
    let drift = fbm_drift::fbm::drift_path(theta, &s.basis, &xi.grid).unwrap_or_else(|_| vec![0.0; xi.values.len()]);
    let pts = xi.grid.points();
    let z: Vec<f64> = (1..pts.len())
        .map(|j| {
            let d = (xi.values[j] - drift[j]) - (xi.values[j - 1] - drift[j - 1]);
            d / (s.sigma * (pts[j] - pts[j - 1]).powf(s.model.h()))
        })
        .collect();
    let n = z.len() as f64;
    let mean = z.iter().sum::<f64>() / n;
    let m2 = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m3 = z.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
    let m4 = z.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
    let inside = z.iter().filter(|v| v.abs() <= 1.96).count() as f64 / n;
    format!(
        "increments: n={}, mean={mean:.4}, variance={m2:.4}, skewness={:.4}, excess kurtosis={:.4}, within 1.96: {inside:.3}",
        z.len(),
        m3 / m2.powf(1.5),
        m4 / (m2 * m2) - 3.0
    )
}

pub fn simulate(ctx: &Ctx) -> Result<Run> {
    let s = ctx.cfg.setup(ctx.base)?;
    let xi = simulate_path(ctx, &s)?;
    eprintln!("simulate: {}", increment_summary(&xi, &s, &ctx.cfg.theta(&s)?));
    let mut out = Outputs::default();
    out.table("path", &path_table(&xi), ctx.format);
    Ok(Run::new(out, String::new()))
}

pub fn transform(ctx: &Ctx) -> Result<Run> {
    let (model, sigma, _) = ctx.cfg.hurst()?;
    let Some(p) = &ctx.cfg.options.input else {
        return Err(ConfigError::new("options.input", "transform needs an observation CSV").into());
    };
    let path = ctx.base.join(p);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| ConfigError::new("options.input", format!("cannot read {}: {e}", path.display())))?;
    let xi = SamplePath::from_csv(&text).map_err(|e| ConfigError::new("options.input", e.to_string()))?;
    let mp = martingale_transform(&xi, &fbm_drift::basis::Sigma::Constant(sigma), &model)?;
    let mut out = Outputs::default();
    out.table("martingale", &martingale_table(&mp), ctx.format);
    Ok(Run::new(out, String::new()))
}

pub fn estimate_ml(ctx: &Ctx) -> Result<Run> {
    let s = ctx.cfg.setup(ctx.base)?;
    let xi = observation(ctx, &s)?;
    let mp = martingale_transform(&xi, &s.basis.sigma, &s.model)?;
    let psi = psi_for(ctx, &s, &xi)?;
    let t = ctx.cfg.eval_time(&xi.grid)?;
    let est = mle_estimate(&psi, &mp, t)?;
    let traj = estimate_trajectory(&psi, &mp)?;
    let dim = psi.dimension();
    let mut table = Table::new().num("t", traj.iter().map(|r| r.t).collect());
    for i in 0..dim {
        table = table.num(format!("theta_{i}"), traj.iter().map(|r| r.theta_hat[i]).collect());
    }
    table = table.num("cond", traj.iter().map(|r| r.info.condition_estimate).collect());
    let info: Vec<Vec<f64>> = (0..est.info.r.nrows())
        .map(|i| est.info.r.row(i).iter().copied().collect())
        .collect();
    let summary = json!({
        "t": est.t,
        "theta_hat": est.theta_hat,
        "estimated": est.estimated,
        "condition": est.info.condition_estimate,
        "information_indices": est.info.active,
        "information": info,
    });
    let mut out = Outputs::default();
    out.table("trajectory", &table, ctx.format);
    out.json("summary.json", &summary);
    let stdout = format!("theta_hat = {:?}\n", est.theta_hat);
    Ok(Run::new(out, stdout))
}

/// Prior on the identifiable block: conditioned on θ₀ = ξ(0) when the
/// constant term is masked, or given directly on the active indices.
fn active_prior(ctx: &Ctx, psi: &PsiEvaluations, xi0: f64) -> Result<NormalPrior> {
    let active = psi.active();
    let full = psi.dimension();
    let dim = match &ctx.cfg.prior {
        Some(crate::config::PriorConfig::Normal(p)) if p.m.len() == active.len() => active.len(),
        _ => full,
    };
    let prior = ctx.cfg.normal_prior(dim)?;
    if dim == active.len() {
        return Ok(prior);
    }
    if psi.constant_first && !psi.identifiable[0] && active.len() + 1 == full {
        return Ok(prior.condition_on(0, xi0)?.1);
    }
    Ok(prior.marginal(&active)?)
}

fn uniform_basis_check(s: &Setup) -> Result<()> {
    match s.basis.kind {
        BasisKind::Polynomial { degree: 1 } => Ok(()),
        _ => Err(ConfigError::new("basis", "uniform prior needs a polynomial basis of degree 1").into()),
    }
}

pub fn estimate_bayes(ctx: &Ctx) -> Result<Run> {
    let s = ctx.cfg.setup(ctx.base)?;
    let xi = observation(ctx, &s)?;
    let mp = martingale_transform(&xi, &s.basis.sigma, &s.model)?;
    let t = ctx.cfg.eval_time(&xi.grid)?;
    let mut out = Outputs::default();
    let summary = match ctx.cfg.prior {
        Some(crate::config::PriorConfig::Uniform(_)) => {
            uniform_basis_check(&s)?;
            let prior = ctx.cfg.uniform_prior()?;
            let post = uniform_posterior_n1(&prior, &mp, s.sigma, t)?;
            json!({
                "t": t,
                "estimate": post.estimate,
                "mse": post.mse,
                "z": if post.z.is_finite() { Value::from(post.z) } else { Value::Null },
                "log_z": post.log_z,
            })
        }
        _ => {
            let psi = psi_for(ctx, &s, &xi)?;
            let prior = ctx.cfg.normal_prior(psi.dimension())?;
            let gram = gram_matrix(&psi, &s.model, t)?;
            let score = score_vector(&psi, &mp, t)?;
            let post = normal_posterior_full(&prior, &psi, &gram, &score, mp.xi0)?;
            serde_json::to_value(&post)?
        }
    };
    out.json("posterior.json", &summary);
    Ok(Run::new(out, format!("{}\n", serde_json::to_string(&summary)?)))
}

fn normal_cost(ctx: &Ctx) -> Result<(Setup, NormalCost)> {
    let s = ctx.cfg.setup(ctx.base)?;
    let psi = match ctx.cfg.psi_route(&s)? {
        PsiRoute::Closed => psi_closed_poly(&s.model, &s.basis, &s.grid)?,
        PsiRoute::Numeric => psi_numeric(&s.model, &s.basis, &s.grid)?,
    };
    let prior = ctx.cfg.normal_prior(psi.dimension())?;
    let c = ctx.cfg.cost(false)?;
    Ok((s.clone(), NormalCost::new(&prior, &psi, &s.model, c)?))
}

fn refine_tol(ctx: &Ctx, horizon: f64) -> Result<f64> {
    match ctx.cfg.options.refine_tol {
        Some(v) if !(v > 0.0) => Err(ConfigError::new("options.refine_tol", format!("must be > 0, got {v}")).into()),
        Some(v) => Ok(v),
        None => Ok(1e-10 * horizon),
    }
}

pub fn cost_curve(ctx: &Ctx) -> Result<Run> {
    let (s, cost) = normal_cost(ctx)?;
    let sol = normal_optimal_stop(&cost, &s.grid, refine_tol(ctx, s.grid.horizon())?)?;
    let curve = sol.cost_curve.as_ref().expect("normal stopping samples the curve");
    let tau = sol.tau.expect("deterministic stopping time");
    let changes = curve.sign_changes();
    let summary = json!({
        "tau": tau,
        "expected_cost": sol.expected_cost,
        "sign_changes": changes,
        "unique_interior_minimum": changes == 1 && tau > 0.0 && tau < s.grid.horizon(),
    });
    let mut out = Outputs::default();
    out.table(
        "F_curve",
        &Table::new().num("t", curve.t.clone()).num("F", curve.f.clone()),
        ctx.format,
    );
    out.json("summary.json", &summary);
    Ok(Run::new(out, format!("{}\n", serde_json::to_string(&summary)?)))
}

pub fn stop_normal(ctx: &Ctx) -> Result<Run> {
    let (s, cost) = normal_cost(ctx)?;
    let sol = normal_optimal_stop(&cost, &s.grid, refine_tol(ctx, s.grid.horizon())?)?;
    let summary = json!({
        "tau": sol.tau,
        "expected_cost": sol.expected_cost,
        "F_at_zero": cost.eval(0.0),
        "F_at_horizon": cost.eval(s.grid.horizon()),
    });
    let mut out = Outputs::default();
    out.json("summary.json", &summary);
    Ok(Run::new(out, format!("{}\n", serde_json::to_string(&summary)?)))
}

pub fn stop_uniform(ctx: &Ctx) -> Result<Run> {
    let (model, sigma, grid) = ctx.cfg.hurst()?;
    let prior = ctx.cfg.uniform_prior()?;
    let c = ctx.cfg.cost(true)?;
    let lattice = ctx.cfg.lattice()?;
    let sol = uniform_stop_dp(&prior, &model, sigma, c, &grid, &lattice)?;
    let policy = sol.policy.as_ref().expect("dp returns a policy");
    let mut t = Vec::new();
    let mut m = Vec::new();
    let mut action = Vec::new();
    for (k, tk) in policy.times.iter().enumerate() {
        for (mk, st) in policy.nodes[k].iter().zip(&policy.stop[k]) {
            t.push(*tk);
            m.push(*mk);
            action.push(if *st { "stop" } else { "continue" }.to_string());
        }
    }
    let summary = json!({
        "expected_cost": sol.expected_cost,
        "tau": sol.tau,
        "stops_immediately": sol.tau == Some(0.0),
        "prior_variance": prior.variances()[0],
    });
    let mut out = Outputs::default();
    out.table("policy", &Table::new().num("t", t).num("M", m).text("action", action), ctx.format);
    out.json("summary.json", &summary);
    Ok(Run::new(out, format!("{}\n", serde_json::to_string(&summary)?)))
}

pub fn mc(ctx: &Ctx) -> Result<Run> {
    let s = ctx.cfg.setup(ctx.base)?;
    let theta = ctx.cfg.theta(&s)?;
    let seed = ctx.cfg.seed(ctx.seed)?;
    let replications = ctx
        .cfg
        .options
        .replications
        .ok_or_else(|| ConfigError::new("options.replications", "missing"))?;
    if replications == 0 {
        return Err(ConfigError::new("options.replications", "must be >= 1").into());
    }
    let estimator = ctx.cfg.options.estimator.unwrap_or(EstimatorKind::Mle);
    let spec = ExperimentSpec {
        scenario: ctx.cfg.options.scenario.clone().unwrap_or_else(|| "mc".into()),
        psi: ctx.cfg.psi_route(&s)?,
        model: s.model,
        basis: s.basis,
        grid: s.grid,
        theta,
        estimator,
        method: s.method,
        replications,
        base_seed: seed,
        outputs: ctx.cfg.options.outputs.clone(),
    };
    let report = run_mc(&spec)?;
    let mut out = Outputs::default();
    match ctx.format {
        Format::Csv => out.raw("report.csv".into(), report.to_csv()),
        Format::Json => {
            let rows: Vec<Value> = report
                .rows
                .iter()
                .map(|r| json!({"scenario": r.scenario, "statistic": r.statistic, "value": r.value, "se": r.se, "n_reps": r.n_reps}))
                .collect();
            out.json("report.json", &Value::from(rows));
        }
    }
    if !report.failures.is_empty() {
        let f: Vec<Value> = report.failures.iter().map(|(r, m)| json!({"replication": r, "error": m})).collect();
        out.json("failures.json", &Value::from(f));
    }
    Ok(Run::new(out, String::new()))
}

fn summary_json(p: &fbm_drift::bayes::PosteriorSummary) -> Value {
    json!({"mean": p.mean, "cov": p.cov})
}

fn max_diff(a: &fbm_drift::bayes::PosteriorSummary, b: &fbm_drift::bayes::PosteriorSummary) -> (f64, f64) {
    let dm = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let dc = a
        .cov
        .iter()
        .flatten()
        .zip(b.cov.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    (dm, dc)
}

pub fn oracle_check(ctx: &Ctx) -> Result<Run> {
    let s = ctx.cfg.setup(ctx.base)?;
    let xi = observation(ctx, &s)?;
    let mp = martingale_transform(&xi, &s.basis.sigma, &s.model)?;
    let t = ctx.cfg.eval_time(&xi.grid)?;
    if t <= 0.0 {
        return Err(ConfigError::new("options.t", "oracle check needs t > 0").into());
    }
    let tol = match ctx.cfg.options.tolerance {
        Some(v) if !(v > 0.0) => return Err(ConfigError::new("options.tolerance", "must be > 0").into()),
        Some(v) => v,
        None => 1e-6,
    };
    let psi = psi_for(ctx, &s, &xi)?;
    let gram = gram_matrix(&psi, &s.model, t)?;
    let score = score_vector(&psi, &mp, t)?;
    if gram.dim() > 2 {
        return Err(ConfigError::new("basis", "oracle check supports at most two identifiable coefficients").into());
    }
    let grid = ctx.cfg.options.oracle_grid;
    let (closed, oracle) = match ctx.cfg.prior {
        Some(crate::config::PriorConfig::Uniform(_)) => {
            uniform_basis_check(&s)?;
            let prior: UniformPrior = ctx.cfg.uniform_prior()?;
            let u = uniform_posterior_n1(&prior, &mp, s.sigma, t)?;
            let closed = fbm_drift::bayes::PosteriorSummary {
                t,
                mean: vec![u.estimate],
                cov: vec![vec![u.mse]],
                mse_trace: u.mse,
            };
            (closed, quadrature_posterior_oracle(&Prior::Uniform(prior), &gram, &score, &grid)?)
        }
        _ => {
            let prior = active_prior(ctx, &psi, mp.xi0)?;
            let closed = normal_posterior(&prior, &gram, &score)?;
            (closed, quadrature_posterior_oracle(&Prior::Normal(prior), &gram, &score, &grid)?)
        }
    };
    let (dm, dc) = max_diff(&closed, &oracle);
    let pass = dm <= tol && dc <= tol;
    let summary = json!({
        "t": t,
        "closed_form": summary_json(&closed),
        "oracle": summary_json(&oracle),
        "max_abs_diff_mean": dm,
        "max_abs_diff_cov": dc,
        "tolerance": tol,
        "pass": pass,
    });
    let mut out = Outputs::default();
    out.json("oracle.json", &summary);
    let mut run = Run::new(out, format!("{}\n", if pass { "PASS" } else { "FAIL" }));
    if !pass {
        run.failed = Some(format!("oracle mismatch: mean {dm:e}, cov {dc:e}, tolerance {tol:e}"));
    }
    Ok(run)
}
