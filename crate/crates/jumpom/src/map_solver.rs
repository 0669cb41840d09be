//! Minimum-action paths: the OM action discretized by the midpoint rule on
//! uniform knots, minimized over the interior knots with the endpoints
//! pinned.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::FiniteActivityModel;
use crate::om::{JumpQuadSpec, JumpTermRule};
use crate::sde_sim::DiscretePath;

#[derive(Debug, Error)]
pub enum MapError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("non-finite action at iteration {0}")]
    NonFinite(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// Steepest descent in the metric of the discrete kinetic term
    /// `Σ |Δx|² / (2σ²Δt)`, with Armijo backtracking from a unit step.
    #[default]
    Preconditioned,
    /// Euclidean steepest descent with Armijo backtracking; the trial step
    /// starts at twice the last accepted one.
    Plain,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerOptions {
    pub max_iters: usize,
    /// Stop when the Euclidean norm of the gradient over interior knots
    /// falls below this value.
    pub grad_tol: f64,
    pub armijo_c: f64,
    pub step_rule: StepRule,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        OptimizerOptions {
            max_iters: 5000,
            grad_tol: 1e-6,
            armijo_c: 1e-4,
            step_rule: StepRule::Preconditioned,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MapProblem<'a> {
    pub model: &'a FiniteActivityModel,
    pub x0: Vec<f64>,
    pub x_t: Vec<f64>,
    pub t_end: f64,
    /// Knots including both endpoints.
    pub n_knots: usize,
    pub jump_quad: JumpQuadSpec,
    /// Constant added to the divergence integrand.
    pub divergence_shift: f64,
    pub optimizer: OptimizerOptions,
}

impl<'a> MapProblem<'a> {
    pub fn new(model: &'a FiniteActivityModel, x0: &[f64], x_t: &[f64], t_end: f64, n_knots: usize) -> Self {
        MapProblem {
            model,
            x0: x0.to_vec(),
            x_t: x_t.to_vec(),
            t_end,
            n_knots,
            jump_quad: JumpQuadSpec::default(),
            divergence_shift: 0.0,
            optimizer: OptimizerOptions::default(),
        }
    }

    fn check(&self) -> Result<(), MapError> {
        let d = self.model.dim();
        if self.n_knots < 3 {
            return Err(MapError::InvalidProblem(format!("n_knots = {} < 3", self.n_knots)));
        }
        if self.x0.len() != d || self.x_t.len() != d {
            return Err(MapError::InvalidProblem("endpoint dimension differs from the model".into()));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(MapError::InvalidProblem(format!("T = {}", self.t_end)));
        }
        Ok(())
    }

    pub fn linear_knots(&self) -> Vec<f64> {
        let d = self.model.dim();
        let n = self.n_knots - 1;
        let mut x = Vec::with_capacity(self.n_knots * d);
        for i in 0..=n {
            let s = i as f64 / n as f64;
            for k in 0..d {
                x.push(self.x0[k] + s * (self.x_t[k] - self.x0[k]));
            }
        }
        x
    }
}

/// Midpoint-rule action and gradient evaluator for fixed model and grid.
pub struct DiscreteAction<'a> {
    model: &'a FiniteActivityModel,
    rule: JumpTermRule,
    dim: usize,
    dt: f64,
    divergence_shift: f64,
}

struct IntervalTerms {
    value: f64,
    /// `∂S_i/∂x_{i-1}` and `∂S_i/∂x_i`.
    d_left: [f64; 2],
    d_right: [f64; 2],
}

impl<'a> DiscreteAction<'a> {
    pub fn new(model: &'a FiniteActivityModel, t_end: f64, n_intervals: usize, quad: JumpQuadSpec) -> Self {
        DiscreteAction {
            model,
            rule: JumpTermRule::new(model, quad),
            dim: model.dim(),
            dt: t_end / n_intervals as f64,
            divergence_shift: 0.0,
        }
    }

    pub fn with_divergence_shift(mut self, c: f64) -> Self {
        self.divergence_shift = c;
        self
    }

    fn interval(&self, a: &[f64], b: &[f64], grad: bool) -> IntervalTerms {
        let (d, dt, m) = (self.dim, self.dt, self.model);
        let s2 = m.sigma() * m.sigma();
        let mut mid = [0.0; 2];
        for k in 0..d {
            mid[k] = 0.5 * (a[k] + b[k]);
        }
        let xm = &mid[..d];
        let jt = self.rule.eval(m, xm, grad);
        let mut drift = [0.0; 2];
        m.drift_at(xm, &mut drift[..d]);
        let mut r = [0.0; 2];
        let mut r2 = 0.0;
        for k in 0..d {
            r[k] = (b[k] - a[k]) / dt - drift[k] - jt.ell[k];
            r2 += r[k] * r[k];
        }
        let div = m.drift_divergence_at(xm) + jt.div_ell + self.divergence_shift;
        let value = dt * (0.5 * r2 / s2 + 0.5 * div + 0.5 * jt.ell_tilde);
        let mut out = IntervalTerms {
            value,
            d_left: [0.0; 2],
            d_right: [0.0; 2],
        };
        if grad {
            let mut gdiv = [0.0; 2];
            m.drift_divergence_grad_at(xm, &mut gdiv[..d]);
            for j in 0..d {
                // derivative with respect to the midpoint
                let mut g = 0.0;
                for k in 0..d {
                    let jac = m.drift_jacobian_at(xm, k, j) + jt.jac_ell[k][j];
                    g -= r[k] * jac / s2;
                }
                g += 0.5 * (gdiv[j] + jt.grad_div_ell[j]) + 0.5 * jt.grad_ell_tilde[j];
                g *= dt;
                let kin = r[j] / s2;
                out.d_left[j] = -kin + 0.5 * g;
                out.d_right[j] = kin + 0.5 * g;
            }
        }
        out
    }

    fn intervals(&self, x: &[f64], grad: bool) -> Vec<IntervalTerms> {
        let d = self.dim;
        let n = x.len() / d - 1;
        (0..n)
            .into_par_iter()
            .map(|i| self.interval(&x[i * d..(i + 1) * d], &x[(i + 1) * d..(i + 2) * d], grad))
            .collect()
    }

    /// Action of the knot vector (row-major, endpoints included).
    pub fn value(&self, x: &[f64]) -> f64 {
        self.intervals(x, false).iter().map(|t| t.value).sum()
    }

    /// Action and its gradient over all knots; endpoint entries included.
    pub fn value_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let d = self.dim;
        let terms = self.intervals(x, true);
        let mut g = vec![0.0; x.len()];
        let mut v = 0.0;
        for (i, t) in terms.iter().enumerate() {
            v += t.value;
            for k in 0..d {
                g[i * d + k] += t.d_left[k];
                g[(i + 1) * d + k] += t.d_right[k];
            }
        }
        (v, g)
    }
}

fn knots_of(path: &DiscretePath) -> Result<(f64, usize), MapError> {
    let n = path.n_steps();
    let t_end = path.t[n] - path.t[0];
    let dt = t_end / n as f64;
    for w in path.t.windows(2) {
        if ((w[1] - w[0]) - dt).abs() > 1e-9 * dt.max(1.0) {
            return Err(MapError::InvalidProblem("knot times are not uniform".into()));
        }
    }
    Ok((t_end, n))
}

/// Midpoint discretization of the OM action on the knots of `path`.
pub fn discretize_action(m: &FiniteActivityModel, path: &DiscretePath, quad: JumpQuadSpec) -> Result<f64, MapError> {
    let (t_end, n) = knots_of(path)?;
    Ok(DiscreteAction::new(m, t_end, n, quad).value(&path.x))
}

/// Gradient over the interior knots, row-major `(n - 1) × dim`.
pub fn action_gradient(
    m: &FiniteActivityModel,
    path: &DiscretePath,
    quad: JumpQuadSpec,
) -> Result<Vec<f64>, MapError> {
    let (t_end, n) = knots_of(path)?;
    let d = m.dim();
    let (_, g) = DiscreteAction::new(m, t_end, n, quad).value_and_gradient(&path.x);
    Ok(g[d..n * d].to_vec())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub converged: bool,
    pub iterations: usize,
    pub grad_norm: f64,
    pub initial_action: f64,
    pub final_action: f64,
    /// Action after every accepted step, starting with the initial value.
    pub history: Vec<f64>,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct MapSolution {
    pub path: DiscretePath,
    pub action: f64,
    pub report: ConvergenceReport,
}

/// Solves `M y = g` per coordinate, `M = tridiag(-1, 2, -1) / (σ²Δt)` over
/// the interior knots.
fn kinetic_precondition(g: &[f64], d: usize, n_int: usize, scale: f64) -> Vec<f64> {
    let mut out = vec![0.0; g.len()];
    let mut c = vec![0.0; n_int];
    let mut y = vec![0.0; n_int];
    for k in 0..d {
        // Thomas algorithm on diag 2, off-diagonals -1
        let mut denom = 2.0;
        c[0] = -1.0 / denom;
        y[0] = g[k] / denom;
        for i in 1..n_int {
            denom = 2.0 + c[i - 1];
            c[i] = -1.0 / denom;
            y[i] = (g[i * d + k] + y[i - 1]) / denom;
        }
        for i in (0..n_int - 1).rev() {
            y[i] -= c[i] * y[i + 1];
        }
        for i in 0..n_int {
            out[i * d + k] = y[i] / scale;
        }
    }
    out
}

/// Descent with Armijo backtracking from `init` (linear interpolation when
/// `None`). The endpoints are copied from the problem and never touched.
pub fn minimize_action(p: &MapProblem, init: Option<&[f64]>) -> Result<MapSolution, MapError> {
    p.check()?;
    let d = p.model.dim();
    let n = p.n_knots - 1;
    let n_int = n - 1;
    let dt = p.t_end / n as f64;
    let act = DiscreteAction::new(p.model, p.t_end, n, p.jump_quad).with_divergence_shift(p.divergence_shift);
    let mut x = match init {
        Some(k) => {
            if k.len() != p.n_knots * d {
                return Err(MapError::InvalidProblem(format!(
                    "initial path has {} values, expected {}",
                    k.len(),
                    p.n_knots * d
                )));
            }
            k.to_vec()
        }
        None => p.linear_knots(),
    };
    x[..d].copy_from_slice(&p.x0);
    x[n * d..].copy_from_slice(&p.x_t);

    let opt = &p.optimizer;
    let (mut f, mut g_full) = act.value_and_gradient(&x);
    if !f.is_finite() {
        return Err(MapError::NonFinite(0));
    }
    let initial = f;
    let mut history = vec![f];
    let mut alpha_prev = 1.0;
    let mut iters = 0;
    let mut converged = false;
    let mut message = String::from("max_iters reached");
    let s2 = p.model.sigma() * p.model.sigma();
    let mut trial = x.clone();
    loop {
        let g = &g_full[d..n * d];
        let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gnorm < opt.grad_tol {
            converged = true;
            message = "gradient tolerance reached".into();
            break;
        }
        if iters >= opt.max_iters {
            break;
        }
        let dir: Vec<f64> = match opt.step_rule {
            StepRule::Preconditioned => kinetic_precondition(g, d, n_int, 1.0 / (s2 * dt))
                .into_iter()
                .map(|v| -v)
                .collect(),
            StepRule::Plain => g.iter().map(|v| -v).collect(),
        };
        let slope: f64 = g.iter().zip(&dir).map(|(a, b)| a * b).sum();
        if !(slope < 0.0) {
            message = "search direction is not a descent direction".into();
            break;
        }
        let mut alpha = match opt.step_rule {
            StepRule::Preconditioned => 1.0,
            StepRule::Plain => 2.0 * alpha_prev,
        };
        let mut accepted = None;
        for _ in 0..60 {
            for (j, dv) in dir.iter().enumerate() {
                trial[d + j] = x[d + j] + alpha * dv;
            }
            let ft = act.value(&trial);
            if ft.is_finite() && ft <= f + opt.armijo_c * alpha * slope {
                accepted = Some(ft);
                break;
            }
            alpha *= 0.5;
        }
        let Some(ft) = accepted else {
            message = "line search failed to find an Armijo step".into();
            break;
        };
        x.copy_from_slice(&trial);
        alpha_prev = alpha;
        iters += 1;
        let (fv, gv) = act.value_and_gradient(&x);
        debug_assert!((fv - ft).abs() <= 1e-12 * fv.abs().max(1.0));
        f = fv;
        g_full = gv;
        history.push(f);
    }
    let grad_norm = g_full[d..n * d].iter().map(|v| v * v).sum::<f64>().sqrt();
    let path = DiscretePath::uniform(d, p.t_end, x).map_err(|e| MapError::InvalidProblem(e.to_string()))?;
    Ok(MapSolution {
        path,
        action: f,
        report: ConvergenceReport {
            converged,
            iterations: iters,
            grad_norm,
            initial_action: initial,
            final_action: f,
            history,
            message,
        },
    })
}
