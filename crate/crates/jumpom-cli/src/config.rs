//! Experiment configuration documents.

use std::path::{Path, PathBuf};

use jumpom::map_solver::StepRule;
use jumpom::models::{
    state_vars, FiniteActivityModel, GridSpec, InfiniteActivityModel, InfiniteValidationGrid,
    JumpFamily, JumpSizeDensity,
};
use jumpom::stats::Metric;
use jumpom::tube::Monitor;
use serde::{Deserialize, Deserializer, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; TOML integers stop at `i64::MAX`, so larger seeds may be
    /// written as decimal strings.
    #[serde(deserialize_with = "de_seed")]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Worker threads; 0 or absent uses every available core.
    #[serde(default)]
    pub threads: Option<usize>,
    pub model: ModelConfig,
    #[serde(default)]
    pub numerics: Numerics,
    pub experiment: Experiment,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn de_seed<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Int(i64),
        Text(String),
    }
    match Repr::deserialize(d)? {
        Repr::Int(v) => u64::try_from(v)
            .map_err(|_| serde::de::Error::custom(format!("seed {v} is negative"))),
        Repr::Text(s) => s
            .trim()
            .parse::<u64>()
            .map_err(|e| serde::de::Error::custom(format!("seed `{s}`: {e}"))),
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    /// `dX = b dt + σ dB + J dN`, `N` of intensity `λ(X-)`, `J ~ ν_J`.
    Finite {
        drift: Vec<String>,
        sigma: f64,
        lambda: String,
        jump: JumpFamily,
    },
    /// Scalar model with jump map `F(x,z)` and Lévy density `ν(x,z)`.
    Infinite {
        drift: String,
        sigma: f64,
        jump_map: String,
        nu: String,
        dominating: String,
        alpha: f64,
    },
    /// A scalar finite-activity model written in infinite-activity form.
    Embedded {
        drift: String,
        sigma: f64,
        lambda: String,
        jump: JumpFamily,
        lambda_bound: f64,
    },
}

/// A built model.
#[derive(Debug, Clone)]
pub enum Model {
    Finite(FiniteActivityModel),
    Infinite(InfiniteActivityModel),
}

impl ModelConfig {
    pub fn build(&self) -> Result<Model, CliError> {
        let invalid = |e: jumpom::models::ModelError| CliError::validation("models", e.to_string());
        match self {
            ModelConfig::Finite {
                drift,
                sigma,
                lambda,
                jump,
            } => {
                if !(1..=2).contains(&drift.len()) {
                    return Err(CliError::validation(
                        "models",
                        format!("drift has {} components; dimension must be 1 or 2", drift.len()),
                    ));
                }
                let nu = JumpSizeDensity::new(jump.clone(), drift.len()).map_err(invalid)?;
                let drift: Vec<&str> = drift.iter().map(String::as_str).collect();
                FiniteActivityModel::from_strings(&drift, *sigma, lambda, nu)
                    .map(Model::Finite)
                    .map_err(invalid)
            }
            ModelConfig::Infinite {
                drift,
                sigma,
                jump_map,
                nu,
                dominating,
                alpha,
            } => InfiniteActivityModel::from_strings(drift, *sigma, jump_map, nu, dominating, *alpha)
                .map(Model::Infinite)
                .map_err(invalid),
            ModelConfig::Embedded {
                drift,
                sigma,
                lambda,
                jump,
                lambda_bound,
            } => {
                let nu = JumpSizeDensity::new(jump.clone(), 1).map_err(invalid)?;
                let m = FiniteActivityModel::from_strings(&[drift.as_str()], *sigma, lambda, nu)
                    .map_err(invalid)?;
                InfiniteActivityModel::embed_finite(&m, *lambda_bound)
                    .map(Model::Infinite)
                    .map_err(invalid)
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ModelConfig::Finite { drift, .. } => drift.len(),
            _ => 1,
        }
    }
}

/// Grids, quadrature sizes and tolerances shared by the experiments.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct Numerics {
    /// Box grid for validation and the Fokker–Planck solver; defaults to
    /// `[-4, 4]^d` with 801 nodes (1D) or 161 per side (2D).
    pub grid: Option<GridSpec>,
    pub theta_nodes: usize,
    pub z_nodes: usize,
    pub t_panels: usize,
    pub t_nodes_per_panel: usize,
    /// Gauss–Legendre nodes per cell in the solver and flow-table kernels.
    pub nodes_per_cell: usize,
    pub tol_mass: f64,
    pub grad_tol: f64,
    pub max_iters: usize,
    pub step_rule: StepRule,
    pub bootstrap: usize,
    pub eta: f64,
    pub infinite_grid: InfiniteValidationGrid,
    pub z_cutoff: f64,
    pub z_nodes_per_panel: usize,
    pub fd_step: f64,
}

impl Default for Numerics {
    fn default() -> Self {
        Numerics {
            grid: None,
            theta_nodes: 16,
            z_nodes: 64,
            t_panels: 256,
            t_nodes_per_panel: 4,
            nodes_per_cell: 4,
            tol_mass: 1e-4,
            grad_tol: 1e-6,
            max_iters: 5000,
            step_rule: StepRule::Preconditioned,
            bootstrap: 200,
            eta: 0.4,
            infinite_grid: InfiniteValidationGrid::default(),
            z_cutoff: 1e-3,
            z_nodes_per_panel: 16,
            fd_step: 1e-5,
        }
    }
}

impl Numerics {
    pub fn grid_for(&self, dim: usize) -> GridSpec {
        self.grid.clone().unwrap_or_else(|| GridSpec {
            lo: vec![-4.0; dim],
            hi: vec![4.0; dim],
            n: if dim == 1 { 801 } else { 161 },
        })
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Validate(ValidateExp),
    Simulate(SimulateExp),
    SolveFpe(SolveFpeExp),
    FlowCompare(FlowCompareExp),
    OmEval(OmEvalExp),
    TubeRatio(TubeRatioExp),
    Map(MapExp),
    DomEval(DomEvalExp),
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Validate(_) => "validate",
            Experiment::Simulate(_) => "simulate",
            Experiment::SolveFpe(_) => "solve-fpe",
            Experiment::FlowCompare(_) => "flow-compare",
            Experiment::OmEval(_) => "om-eval",
            Experiment::TubeRatio(_) => "tube-ratio",
            Experiment::Map(_) => "map",
            Experiment::DomEval(_) => "dom-eval",
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateExp {}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateExp {
    pub x0: Vec<f64>,
    pub t_end: f64,
    pub n_steps: usize,
    pub n_paths: usize,
    /// Thinning bound; 1.1 × the largest rate on the grid when absent.
    pub lambda_bar: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SolveFpeExp {
    pub x0: Vec<f64>,
    pub t_end: f64,
    pub steps: usize,
    pub epsilon: f64,
    #[serde(default = "one")]
    pub store_every: usize,
    /// Times written to the CSV slices (the final time when empty).
    #[serde(default)]
    pub csv_times: Vec<f64>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct FlowCompareExp {
    pub x0: Vec<f64>,
    pub epsilon: f64,
    pub t_end: f64,
    /// Time steps of the density solve behind the flow drift.
    pub fpe_steps: usize,
    pub n_paths: usize,
    pub n_steps: usize,
    pub snapshots: Vec<f64>,
    pub lambda_bar: Option<f64>,
    #[serde(default = "default_metric")]
    pub metric: Metric,
    /// Also compare two independent jump-diffusion runs.
    #[serde(default)]
    pub noise_floor: bool,
    /// Also run the flow from the unmollified start `x0`.
    #[serde(default)]
    pub point_mass_control: bool,
}

fn default_metric() -> Metric {
    Metric::W1
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct OmEvalExp {
    /// One expression in `t` per coordinate.
    pub path: Vec<String>,
    pub t_end: f64,
    pub x0: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct TubeRatioExp {
    pub path1: Vec<String>,
    pub path2: Vec<String>,
    pub t_end: f64,
    pub deltas: Vec<f64>,
    pub n_paths: usize,
    pub n_steps: usize,
    pub lambda_bar: Option<f64>,
    #[serde(default)]
    pub monitor: Monitor,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct MapExp {
    pub x0: Vec<f64>,
    pub x_t: Vec<f64>,
    pub t_end: f64,
    /// Knots including both endpoints.
    pub n_knots: usize,
    #[serde(default)]
    pub divergence_shift: f64,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct DomEvalExp {
    /// Path CSV (`t, x1[, jump_flag]`), relative to the config file.
    pub path_csv: Option<PathBuf>,
    /// Alternatively an expression in `t` sampled on a uniform grid.
    pub path: Option<String>,
    pub t_end: Option<f64>,
    pub n_steps: Option<usize>,
    pub z_max: Option<f64>,
    #[serde(default = "yes")]
    pub resolution_check: bool,
}

fn yes() -> bool {
    true
}

impl ExperimentConfig {
    /// Parses a config document; `base` resolves relative file references.
    pub fn parse(text: &str, base: &Path) -> Result<Self, CliError> {
        let value: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| CliError::Config(e.message().to_string()))?;
        match value.get("experiment") {
            Some(toml::Value::Table(t)) if t.len() == 1 => {}
            Some(toml::Value::Table(t)) => {
                let keys: Vec<&String> = t.keys().collect();
                return Err(CliError::Config(format!(
                    "exactly one experiment block is required, found {}: {keys:?}",
                    t.len()
                )));
            }
            _ => return Err(CliError::Config("missing [experiment.<name>] block".into())),
        }
        let mut cfg: ExperimentConfig = toml::from_str(text)
            .map_err(|e: toml::de::Error| CliError::Config(e.message().trim().to_string()))?;
        if let Experiment::DomEval(d) = &mut cfg.experiment {
            if let Some(p) = &d.path_csv {
                let full = base.join(p);
                if !full.is_file() {
                    return Err(CliError::Config(format!(
                        "referenced path file {} does not exist",
                        full.display()
                    )));
                }
                d.path_csv = Some(full);
            }
        }
        cfg.check_shapes()?;
        Ok(cfg)
    }

    fn check_shapes(&self) -> Result<(), CliError> {
        let d = self.model.dim();
        let vars = state_vars(d.clamp(1, 2));
        let need = |name: &str, v: &[f64]| {
            if v.len() == d {
                Ok(())
            } else {
                Err(CliError::Config(format!(
                    "`{name}` has {} entries, the model state {vars:?} has {d}",
                    v.len()
                )))
            }
        };
        match &self.experiment {
            Experiment::Simulate(e) => need("x0", &e.x0),
            Experiment::SolveFpe(e) => need("x0", &e.x0),
            Experiment::FlowCompare(e) => need("x0", &e.x0),
            Experiment::OmEval(e) => e.x0.as_deref().map_or(Ok(()), |x| need("x0", x)),
            Experiment::Map(e) => need("x0", &e.x0).and(need("x_t", &e.x_t)),
            Experiment::DomEval(e) => match (&e.path_csv, &e.path) {
                (Some(_), None) => Ok(()),
                (None, Some(_)) if e.t_end.is_some() && e.n_steps.is_some() => Ok(()),
                (None, Some(_)) => Err(CliError::Config(
                    "an expression path needs `t_end` and `n_steps`".into(),
                )),
                _ => Err(CliError::Config(
                    "give exactly one of `path_csv` and `path`".into(),
                )),
            },
            _ => Ok(()),
        }
    }
}
