//! JSON run configuration. Every section rejects unknown keys, and every
//! validation failure names the offending JSON path.

use std::fmt;
use std::path::{Path, PathBuf};

use fbm_drift::basis::{DriftBasis, Sigma};
use fbm_drift::bayes::{LatticeSpec, NormalPrior, OracleGrid, UniformPrior};
use fbm_drift::fbm::SimMethod;
use fbm_drift::harness::{EstimatorKind, PsiRoute};
use fbm_drift::hurst::{HurstModel, TimeGrid};
use serde::Deserialize;

/// Invalid configuration; maps to exit code 2.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error at `{}`: {}", self.path, self.message)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: Option<ModelConfig>,
    pub basis: Option<BasisConfig>,
    pub truth: Option<TruthConfig>,
    pub prior: Option<PriorConfig>,
    pub c: Option<f64>,
    pub seed: Option<u64>,
    #[serde(default)]
    pub options: Options,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(rename = "H")]
    pub h: f64,
    pub sigma: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(rename = "N")]
    pub steps: usize,
    #[serde(default)]
    pub method: SimMethod,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum BasisConfig {
    Polynomial { degree: usize },
    Table { path: PathBuf },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthConfig {
    pub theta: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum PriorConfig {
    Normal(NormalPriorConfig),
    Uniform(UniformPriorConfig),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalPriorConfig {
    pub m: Vec<f64>,
    #[serde(rename = "Sigma")]
    pub sigma: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniformPriorConfig {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Options {
    /// Observation CSV (`t,value`), relative to the config file.
    pub input: Option<PathBuf>,
    /// Evaluation time; defaults to T.
    pub t: Option<f64>,
    pub psi: Option<PsiRoute>,
    pub estimator: Option<EstimatorKind>,
    pub replications: Option<u64>,
    pub scenario: Option<String>,
    #[serde(default)]
    pub outputs: Vec<String>,
    #[serde(default)]
    pub lattice: LatticeSpec,
    #[serde(default)]
    pub oracle_grid: OracleGrid,
    pub refine_tol: Option<f64>,
    pub tolerance: Option<f64>,
}

/// Parses the config, reporting the JSON path of the first bad field.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        ConfigError::new(if path.is_empty() { ".".into() } else { path }, e.inner().to_string())
    })
}

pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::new("--config", format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text)
}

/// Validated model pieces shared by most subcommands.
#[derive(Debug, Clone)]
pub struct Setup {
    pub model: HurstModel,
    pub sigma: f64,
    pub grid: TimeGrid,
    pub method: SimMethod,
    pub basis: DriftBasis,
}

impl RunConfig {
    pub fn model(&self) -> Result<&ModelConfig, ConfigError> {
        self.model.as_ref().ok_or_else(|| ConfigError::new("model", "missing section"))
    }

    /// H, σ and the uniform grid, without touching the basis.
    pub fn hurst(&self) -> Result<(HurstModel, f64, TimeGrid), ConfigError> {
        let m = self.model()?;
        let model = HurstModel::new(m.h).map_err(|e| ConfigError::new("model.H", e.to_string()))?;
        if !(m.sigma > 0.0 && m.sigma.is_finite()) {
            return Err(ConfigError::new("model.sigma", format!("must be > 0, got {}", m.sigma)));
        }
        if !(m.horizon > 0.0 && m.horizon.is_finite()) {
            return Err(ConfigError::new("model.T", format!("must be > 0, got {}", m.horizon)));
        }
        if m.steps == 0 {
            return Err(ConfigError::new("model.N", "must be >= 1"));
        }
        let grid = TimeGrid::uniform(m.horizon, m.steps).map_err(|e| ConfigError::new("model.N", e.to_string()))?;
        Ok((model, m.sigma, grid))
    }

    pub fn setup(&self, base: &Path) -> Result<Setup, ConfigError> {
        let m = self.model()?;
        let (model, _, grid) = self.hurst()?;
        let sigma = Sigma::Constant(m.sigma);
        let basis = match self.basis.as_ref().ok_or_else(|| ConfigError::new("basis", "missing section"))? {
            BasisConfig::Polynomial { degree } => {
                if *degree == 0 {
                    return Err(ConfigError::new("basis.degree", "must be >= 1"));
                }
                DriftBasis::polynomial(*degree, sigma)
            }
            BasisConfig::Table { path } => DriftBasis::read_tabulated_csv(&base.join(path), sigma)
                .map_err(|e| ConfigError::new("basis.path", e.to_string()))?,
        };
        Ok(Setup {
            model,
            sigma: m.sigma,
            grid,
            method: m.method,
            basis,
        })
    }

    pub fn theta(&self, setup: &Setup) -> Result<Vec<f64>, ConfigError> {
        let t = self.truth.as_ref().ok_or_else(|| ConfigError::new("truth", "missing section"))?;
        if t.theta.len() != setup.basis.dimension() {
            return Err(ConfigError::new(
                "truth.theta",
                format!("expected {} coefficients, got {}", setup.basis.dimension(), t.theta.len()),
            ));
        }
        if let Some(i) = t.theta.iter().position(|v| !v.is_finite()) {
            return Err(ConfigError::new(format!("truth.theta[{i}]"), "must be finite"));
        }
        Ok(t.theta.clone())
    }

    pub fn seed(&self, flag: Option<u64>) -> Result<u64, ConfigError> {
        flag.or(self.seed)
            .ok_or_else(|| ConfigError::new("seed", "missing (set it in the config or pass --seed)"))
    }

    pub fn cost(&self, strictly_positive: bool) -> Result<f64, ConfigError> {
        let c = self.c.ok_or_else(|| ConfigError::new("c", "missing observation cost"))?;
        let ok = if strictly_positive { c > 0.0 } else { c >= 0.0 };
        if !(ok && c.is_finite()) {
            let bound = if strictly_positive { "> 0" } else { ">= 0" };
            return Err(ConfigError::new("c", format!("must be {bound}, got {c}")));
        }
        Ok(c)
    }

    pub fn normal_prior(&self, dim: usize) -> Result<NormalPrior, ConfigError> {
        match self.prior.as_ref().ok_or_else(|| ConfigError::new("prior", "missing section"))? {
            PriorConfig::Normal(p) => {
                if p.m.len() != dim {
                    return Err(ConfigError::new(
                        "prior.normal.m",
                        format!("expected {dim} entries, got {}", p.m.len()),
                    ));
                }
                NormalPrior::new(p.m.clone(), p.sigma.clone())
                    .map_err(|e| ConfigError::new("prior.normal.Sigma", e.to_string()))
            }
            PriorConfig::Uniform(_) => Err(ConfigError::new("prior", "this command needs a normal prior")),
        }
    }

    pub fn uniform_prior(&self) -> Result<UniformPrior, ConfigError> {
        match self.prior.as_ref().ok_or_else(|| ConfigError::new("prior", "missing section"))? {
            PriorConfig::Uniform(p) => {
                if p.a.len() != 1 || p.b.len() != 1 {
                    return Err(ConfigError::new("prior.uniform", "uniform prior supports one coefficient"));
                }
                UniformPrior::new(p.a.clone(), p.b.clone()).map_err(|e| ConfigError::new("prior.uniform.b", e.to_string()))
            }
            PriorConfig::Normal(_) => Err(ConfigError::new("prior", "this command needs a uniform prior")),
        }
    }

    pub fn psi_route(&self, setup: &Setup) -> Result<PsiRoute, ConfigError> {
        match (self.options.psi, setup.basis.is_polynomial()) {
            (Some(PsiRoute::Closed), false) => Err(ConfigError::new(
                "options.psi",
                "closed-form psi needs a polynomial basis",
            )),
            (Some(r), _) => Ok(r),
            (None, true) => Ok(PsiRoute::Closed),
            (None, false) => Ok(PsiRoute::Numeric),
        }
    }

    /// Evaluation time: options.t if given (must be a grid point), else T.
    pub fn eval_time(&self, grid: &TimeGrid) -> Result<f64, ConfigError> {
        match self.options.t {
            None => Ok(grid.horizon()),
            Some(t) => {
                grid.index_of(t).map_err(|e| ConfigError::new("options.t", e.to_string()))?;
                Ok(t)
            }
        }
    }

    pub fn lattice(&self) -> Result<LatticeSpec, ConfigError> {
        let l = self.options.lattice;
        if l.bins < 51 {
            return Err(ConfigError::new("options.lattice.bins", format!("must be >= 51, got {}", l.bins)));
        }
        if l.hermite_nodes < 3 {
            return Err(ConfigError::new(
                "options.lattice.hermite_nodes",
                format!("must be >= 3, got {}", l.hermite_nodes),
            ));
        }
        Ok(l)
    }
}
