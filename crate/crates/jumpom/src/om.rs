//! Onsager–Machlup action of the finite-activity jump-diffusion.
//!
//! `S(ψ) = ½ ∫₀ᵀ [ |ψ̇ - b(ψ) - ℓ_J(ψ)|² / σ² + ∇·(b + ℓ_J)(ψ) + ℓ̃_J(ψ) ] dt`
//! with
//! `ℓ_J(x) = ∫ z ∫₀¹ λ(x - θz) ν_J(-θz)/ν_J(0) dθ ν_J(dz)` and
//! `ℓ̃_J(x) = ∫ z·∫₀¹ λ(x - θz) [∇ν_J(-θz) ν_J(0) - ν_J(-θz) ∇ν_J(0)] / ν_J(0)² dθ ν_J(dz)`.
//!
//! Both integrals are linear in `λ`, so every node of the θ–z rule carries
//! a precomputed scalar weight and the terms (and their x-derivatives) are
//! weighted sums of `λ`, `∇λ` and `∇²λ` at the shifted points `x - θz`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{ExprError, ExpressionAst};
use crate::models::FiniteActivityModel;
use crate::quad::GaussLegendre;

#[derive(Debug, Error)]
pub enum OmError {
    #[error("path expression error: {0}")]
    Expr(#[from] ExprError),
    #[error("invalid path: {0}")]
    InvalidPath(String),
}

/// A C² path `t ↦ ψ(t)` on `[0, T]`.
pub trait Trajectory: Sync {
    fn dim(&self) -> usize;
    fn t_end(&self) -> f64;
    /// Position and velocity at `t`.
    fn eval(&self, t: f64, x: &mut [f64], v: &mut [f64]);
}

/// Path given by one expression in `t` per coordinate.
#[derive(Debug, Clone)]
pub struct SmoothPath {
    components: Vec<ExpressionAst>,
    derivatives: Vec<ExpressionAst>,
    t_end: f64,
}

impl SmoothPath {
    pub fn new(components: Vec<ExpressionAst>, t_end: f64) -> Result<Self, OmError> {
        if !(1..=2).contains(&components.len()) {
            return Err(OmError::InvalidPath("path must have 1 or 2 components".into()));
        }
        if !(t_end > 0.0 && t_end.is_finite()) {
            return Err(OmError::InvalidPath(format!("horizon T = {t_end}")));
        }
        let mut derivatives = Vec::new();
        for c in &components {
            if c.free_variables() != ["t"] {
                return Err(OmError::InvalidPath(
                    "path components must be expressions in t".into(),
                ));
            }
            derivatives.push(c.differentiate("t")?);
        }
        let p = SmoothPath {
            components,
            derivatives,
            t_end,
        };
        for i in 0..=64 {
            let t = t_end * i as f64 / 64.0;
            for (c, dc) in p.components.iter().zip(&p.derivatives) {
                if !(c.eval(&[t]).is_finite() && dc.eval(&[t]).is_finite()) {
                    return Err(OmError::InvalidPath(format!("non-finite value at t = {t}")));
                }
            }
        }
        Ok(p)
    }

    pub fn parse(components: &[&str], t_end: f64) -> Result<Self, OmError> {
        let comps = components
            .iter()
            .map(|s| ExpressionAst::parse(s, &["t"]))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(comps, t_end)
    }

    /// Checks `ψ(0) = x0` to within 1e-12.
    pub fn check_start(&self, x0: &[f64]) -> Result<(), OmError> {
        for (k, c) in self.components.iter().enumerate() {
            let v = c.eval(&[0.0]);
            if (v - x0[k]).abs() > 1e-12 {
                return Err(OmError::InvalidPath(format!(
                    "psi(0)[{k}] = {v} differs from x0 = {}",
                    x0[k]
                )));
            }
        }
        Ok(())
    }

    pub fn start(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.eval(&[0.0])).collect()
    }

    pub fn components(&self) -> &[ExpressionAst] {
        &self.components
    }
}

impl Trajectory for SmoothPath {
    fn dim(&self) -> usize {
        self.components.len()
    }

    fn t_end(&self) -> f64 {
        self.t_end
    }

    fn eval(&self, t: f64, x: &mut [f64], v: &mut [f64]) {
        for k in 0..self.components.len() {
            x[k] = self.components[k].eval(&[t]);
            v[k] = self.derivatives[k].eval(&[t]);
        }
    }
}

/// Natural cubic spline through uniformly spaced knots.
#[derive(Debug, Clone)]
pub struct SplinePath {
    dim: usize,
    t_end: f64,
    knots: Vec<Vec<f64>>,
    /// Second derivatives at the knots, per dimension.
    m2: Vec<Vec<f64>>,
}

impl SplinePath {
    /// `knots` is row-major `(n + 1) × dim`.
    pub fn new(knots: &[f64], dim: usize, t_end: f64) -> Result<Self, OmError> {
        let n1 = knots.len() / dim;
        if n1 < 3 || knots.len() % dim != 0 {
            return Err(OmError::InvalidPath("spline needs at least 3 knots".into()));
        }
        let n = n1 - 1;
        let h = t_end / n as f64;
        let mut cols = Vec::new();
        let mut m2 = Vec::new();
        for k in 0..dim {
            let y: Vec<f64> = (0..n1).map(|i| knots[i * dim + k]).collect();
            // tridiagonal system for interior second derivatives
            let mut diag = vec![4.0; n - 1];
            let mut rhs: Vec<f64> = (1..n)
                .map(|i| 6.0 * (y[i + 1] - 2.0 * y[i] + y[i - 1]) / (h * h))
                .collect();
            for i in 1..n - 1 {
                let w = 1.0 / diag[i - 1];
                diag[i] -= w;
                rhs[i] -= w * rhs[i - 1];
            }
            let mut mm = vec![0.0; n1];
            for i in (0..n - 1).rev() {
                let next = if i + 1 < n - 1 { mm[i + 2] } else { 0.0 };
                mm[i + 1] = (rhs[i] - next) / diag[i];
            }
            cols.push(y);
            m2.push(mm);
        }
        Ok(SplinePath {
            dim,
            t_end,
            knots: cols,
            m2,
        })
    }
}

impl Trajectory for SplinePath {
    fn dim(&self) -> usize {
        self.dim
    }

    fn t_end(&self) -> f64 {
        self.t_end
    }

    fn eval(&self, t: f64, x: &mut [f64], v: &mut [f64]) {
        let n = self.knots[0].len() - 1;
        let h = self.t_end / n as f64;
        let i = ((t / h).floor() as usize).min(n - 1);
        let a = (i + 1) as f64 * h - t;
        let b = t - i as f64 * h;
        for k in 0..self.dim {
            let (y, m) = (&self.knots[k], &self.m2[k]);
            x[k] = m[i] * a.powi(3) / (6.0 * h)
                + m[i + 1] * b.powi(3) / (6.0 * h)
                + (y[i] / h - m[i] * h / 6.0) * a
                + (y[i + 1] / h - m[i + 1] * h / 6.0) * b;
            v[k] = -m[i] * a * a / (2.0 * h) + m[i + 1] * b * b / (2.0 * h) - (y[i] / h - m[i] * h / 6.0)
                + (y[i + 1] / h - m[i + 1] * h / 6.0);
        }
    }
}

/// Quadrature sizes for the θ–z integrals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpQuadSpec {
    pub theta_nodes: usize,
    pub z_nodes: usize,
}

impl Default for JumpQuadSpec {
    fn default() -> Self {
        JumpQuadSpec {
            theta_nodes: 16,
            z_nodes: 64,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct ShiftNode {
    /// `θ z`
    shift: [f64; 2],
    z: [f64; 2],
    /// weight of `λ(x - θz) z` in `ℓ_J`
    a: f64,
    /// weight of `λ(x - θz)` in `ℓ̃_J`
    b: f64,
}

/// Precomputed θ–z rule for `ℓ_J`, `ℓ̃_J` and their derivatives.
#[derive(Debug, Clone)]
pub struct JumpTermRule {
    dim: usize,
    nodes: Vec<ShiftNode>,
    lambda_const: Option<f64>,
}

/// `ℓ_J`, `∇·ℓ_J`, `ℓ̃_J` and optionally their x-derivatives at a point.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct JumpTerms {
    pub ell: [f64; 2],
    pub div_ell: f64,
    pub ell_tilde: f64,
    /// `jac_ell[i][j] = ∂_j ℓ_J,i`
    pub jac_ell: [[f64; 2]; 2],
    pub grad_div_ell: [f64; 2],
    pub grad_ell_tilde: [f64; 2],
}

impl JumpTermRule {
    pub fn new(m: &FiniteActivityModel, spec: JumpQuadSpec) -> Self {
        let d = m.dim();
        let jump = m.jump();
        let zero = [0.0; 2];
        let mut g0 = [0.0; 2];
        let nu0 = jump.density_and_gradient(&zero[..d], &mut g0[..d]);
        let thetas = GaussLegendre::new(spec.theta_nodes).on_interval(0.0, 1.0);
        let mut nodes = Vec::new();
        if !m.is_jump_free() {
            let mut g = [0.0; 2];
            for zn in jump.quadrature(spec.z_nodes) {
                for &(th, wt) in &thetas {
                    let mut s = [0.0; 2];
                    let mut neg = [0.0; 2];
                    for k in 0..d {
                        s[k] = th * zn.z[k];
                        neg[k] = -s[k];
                    }
                    let nu_s = jump.density_and_gradient(&neg[..d], &mut g[..d]);
                    let a = zn.weight * wt * nu_s / nu0;
                    let mut zg = 0.0;
                    for k in 0..d {
                        zg += zn.z[k] * (g[k] * nu0 - nu_s * g0[k]);
                    }
                    let b = zn.weight * wt * zg / (nu0 * nu0);
                    if a != 0.0 || b != 0.0 {
                        nodes.push(ShiftNode {
                            shift: s,
                            z: zn.z,
                            a,
                            b,
                        });
                    }
                }
            }
        }
        JumpTermRule {
            dim: d,
            nodes,
            lambda_const: m.lambda_expr().as_constant(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Jump terms at `x`; derivatives only when `derivs` is set.
    pub fn eval(&self, m: &FiniteActivityModel, x: &[f64], derivs: bool) -> JumpTerms {
        let d = self.dim;
        let mut out = JumpTerms::default();
        if self.nodes.is_empty() {
            return out;
        }
        if let Some(l) = self.lambda_const {
            // ∇λ = 0: only ℓ_J and ℓ̃_J survive, both proportional to λ
            for n in &self.nodes {
                for k in 0..d {
                    out.ell[k] += n.a * n.z[k];
                }
                out.ell_tilde += n.b;
            }
            for k in 0..d {
                out.ell[k] *= l;
            }
            out.ell_tilde *= l;
            return out;
        }
        let mut y = [0.0; 2];
        let mut gl = [0.0; 2];
        for n in &self.nodes {
            for k in 0..d {
                y[k] = x[k] - n.shift[k];
            }
            let yy = &y[..d];
            let l = m.lambda_at(yy);
            m.lambda_grad_at(yy, &mut gl[..d]);
            let mut zg = 0.0;
            for k in 0..d {
                out.ell[k] += n.a * n.z[k] * l;
                zg += n.z[k] * gl[k];
            }
            out.div_ell += n.a * zg;
            out.ell_tilde += n.b * l;
            if derivs {
                for j in 0..d {
                    for i in 0..d {
                        out.jac_ell[i][j] += n.a * n.z[i] * gl[j];
                    }
                    let mut zh = 0.0;
                    for i in 0..d {
                        zh += n.z[i] * m.lambda_hessian_at(yy, i, j);
                    }
                    out.grad_div_ell[j] += n.a * zh;
                    out.grad_ell_tilde[j] += n.b * gl[j];
                }
            }
        }
        out
    }
}

pub fn ell_j(m: &FiniteActivityModel, x: &[f64], spec: JumpQuadSpec) -> Vec<f64> {
    let t = JumpTermRule::new(m, spec).eval(m, x, false);
    t.ell[..m.dim()].to_vec()
}

pub fn ell_tilde_j(m: &FiniteActivityModel, x: &[f64], spec: JumpQuadSpec) -> f64 {
    JumpTermRule::new(m, spec).eval(m, x, false).ell_tilde
}

/// Quadrature settings for [`om_action`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OmOptions {
    pub t_panels: usize,
    pub t_nodes_per_panel: usize,
    pub jump: JumpQuadSpec,
    /// Relative difference between the panel rule and its half-resolution
    /// counterpart above which a warning is attached.
    pub warn_rel_error: f64,
}

impl Default for OmOptions {
    fn default() -> Self {
        OmOptions {
            t_panels: 256,
            t_nodes_per_panel: 4,
            jump: JumpQuadSpec::default(),
            warn_rel_error: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmEvaluation {
    pub total: f64,
    pub kinetic: f64,
    pub divergence: f64,
    pub ell_tilde: f64,
    pub t_panels: usize,
    pub t_nodes_per_panel: usize,
    pub theta_nodes: usize,
    pub z_nodes: usize,
    /// |S(panels) - S(panels/2)|.
    pub error_estimate: f64,
    pub warning: Option<String>,
}

/// The three integrands at one time node.
fn integrands(
    m: &FiniteActivityModel,
    rule: &JumpTermRule,
    x: &[f64],
    v: &[f64],
) -> (f64, f64, f64) {
    let d = m.dim();
    let mut b = [0.0; 2];
    m.drift_at(x, &mut b[..d]);
    let jt = rule.eval(m, x, false);
    let s2 = m.sigma() * m.sigma();
    let mut r2 = 0.0;
    for k in 0..d {
        let r = v[k] - b[k] - jt.ell[k];
        r2 += r * r;
    }
    (
        0.5 * r2 / s2,
        0.5 * (m.drift_divergence_at(x) + jt.div_ell),
        0.5 * jt.ell_tilde,
    )
}

fn integrate_terms<F>(t_end: f64, panels: usize, nodes: usize, f: F) -> [f64; 3]
where
    F: Fn(f64) -> (f64, f64, f64) + Sync,
{
    use rayon::prelude::*;
    let gl = GaussLegendre::new(nodes);
    let h = t_end / panels as f64;
    // fixed panel order keeps the sum independent of the thread count
    let per_panel: Vec<[f64; 3]> = (0..panels)
        .into_par_iter()
        .map(|p| {
            let mut acc = [0.0; 3];
            for (t, w) in gl.on_interval(p as f64 * h, (p + 1) as f64 * h) {
                let (a, b, c) = f(t);
                acc[0] += w * a;
                acc[1] += w * b;
                acc[2] += w * c;
            }
            acc
        })
        .collect();
    per_panel.iter().fold([0.0; 3], |mut s, v| {
        for k in 0..3 {
            s[k] += v[k];
        }
        s
    })
}

fn evaluation(terms: [f64; 3], coarse: [f64; 3], opts: &OmOptions) -> OmEvaluation {
    let total = terms[0] + terms[1] + terms[2];
    let coarse_total = coarse[0] + coarse[1] + coarse[2];
    let err = (total - coarse_total).abs();
    let warning = (err > opts.warn_rel_error * total.abs().max(1.0)).then(|| {
        format!(
            "time quadrature error estimate {err:.3e}; increase t_panels beyond {}",
            opts.t_panels
        )
    });
    OmEvaluation {
        total,
        kinetic: terms[0],
        divergence: terms[1],
        ell_tilde: terms[2],
        t_panels: opts.t_panels,
        t_nodes_per_panel: opts.t_nodes_per_panel,
        theta_nodes: opts.jump.theta_nodes,
        z_nodes: opts.jump.z_nodes,
        error_estimate: err,
        warning,
    }
}

pub fn om_action<P: Trajectory + ?Sized>(
    m: &FiniteActivityModel,
    psi: &P,
    opts: &OmOptions,
) -> Result<OmEvaluation, OmError> {
    if psi.dim() != m.dim() {
        return Err(OmError::InvalidPath(format!(
            "path dimension {} differs from model dimension {}",
            psi.dim(),
            m.dim()
        )));
    }
    let rule = JumpTermRule::new(m, opts.jump);
    let d = m.dim();
    let f = |t: f64| {
        let mut x = [0.0; 2];
        let mut v = [0.0; 2];
        psi.eval(t, &mut x[..d], &mut v[..d]);
        integrands(m, &rule, &x[..d], &v[..d])
    };
    let fine = integrate_terms(psi.t_end(), opts.t_panels, opts.t_nodes_per_panel, f);
    let coarse = integrate_terms(psi.t_end(), (opts.t_panels / 2).max(1), opts.t_nodes_per_panel, f);
    Ok(evaluation(fine, coarse, opts))
}

/// Classical OM action `½∫ |ψ̇ - b|²/σ² + ∇·b dt` of `dX = b dt + σ dB`.
pub fn classical_om_action<P: Trajectory + ?Sized>(
    drift: &[ExpressionAst],
    sigma: f64,
    psi: &P,
    opts: &OmOptions,
) -> Result<OmEvaluation, OmError> {
    let d = drift.len();
    if psi.dim() != d {
        return Err(OmError::InvalidPath("path and drift dimensions differ".into()));
    }
    let div: Vec<ExpressionAst> = (0..d).map(|k| drift[k].differentiate_index(k)).collect();
    let s2 = sigma * sigma;
    let f = |t: f64| {
        let mut x = [0.0; 2];
        let mut v = [0.0; 2];
        psi.eval(t, &mut x[..d], &mut v[..d]);
        let mut r2 = 0.0;
        let mut dv = 0.0;
        for k in 0..d {
            let r = v[k] - drift[k].eval(&x[..d]);
            r2 += r * r;
            dv += div[k].eval(&x[..d]);
        }
        (0.5 * r2 / s2, 0.5 * dv, 0.0)
    };
    let fine = integrate_terms(psi.t_end(), opts.t_panels, opts.t_nodes_per_panel, f);
    let coarse = integrate_terms(psi.t_end(), (opts.t_panels / 2).max(1), opts.t_nodes_per_panel, f);
    Ok(evaluation(fine, coarse, opts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{JumpFamily, JumpSizeDensity};

    fn jump_model(drift: &str, sigma: f64, lambda: &str, a: f64) -> FiniteActivityModel {
        FiniteActivityModel::from_strings(&[drift], sigma, lambda, JumpSizeDensity::bump(a).unwrap()).unwrap()
    }

    #[test]
    fn symmetric_constant_rate_gives_zero_ell() {
        let m = jump_model("-x", 1.0, "1.7", 0.8);
        for x in [-1.3, 0.0, 0.4, 2.2] {
            assert!(ell_j(&m, &[x], JumpQuadSpec::default())[0].abs() < 1e-8);
        }
    }

    #[test]
    fn ell_tilde_closed_form_for_symmetric_constant_rate() {
        // λ (1 - ∫ ν(z) ν(-z) dz / ν(0)) for symmetric ν
        let m = jump_model("0", 1.0, "2", 0.8);
        let nu = m.jump();
        let gl = GaussLegendre::new(200);
        let overlap = gl.integrate(-0.8, 0.8, |z| nu.density(&[z]) * nu.density(&[-z]));
        let exact = 2.0 * (1.0 - overlap / nu.density(&[0.0]));
        let got = ell_tilde_j(&m, &[0.3], JumpQuadSpec::default());
        assert!((got - exact).abs() < 1e-8 * exact.abs(), "{got} vs {exact}");
    }

    #[test]
    fn linear_in_rate() {
        let m = jump_model("0", 1.0, "1+0.5*tanh(x)", 0.8);
        let m2 = m.with_scaled_rate(2.0);
        let r1 = JumpTermRule::new(&m, JumpQuadSpec::default());
        let r2 = JumpTermRule::new(&m2, JumpQuadSpec::default());
        for x in [-0.9, -0.1, 0.2, 0.77, 1.5] {
            let a = r1.eval(&m, &[x], true);
            let b = r2.eval(&m2, &[x], true);
            assert!((2.0 * a.ell[0] - b.ell[0]).abs() <= 4.0 * f64::EPSILON * b.ell[0].abs().max(1e-300));
            assert!((2.0 * a.ell_tilde - b.ell_tilde).abs() <= 4.0 * f64::EPSILON * b.ell_tilde.abs());
        }
    }

    #[test]
    fn zero_rate_gives_zero_terms() {
        let m = jump_model("-x", 1.0, "0", 0.8);
        let t = JumpTermRule::new(&m, JumpQuadSpec::default()).eval(&m, &[0.3], true);
        assert_eq!(t, JumpTerms::default());
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let j = JumpSizeDensity::new(
            JumpFamily::TruncatedGaussian {
                s: 0.4,
                a: 0.8,
                mean: vec![0.15],
            },
            1,
        )
        .unwrap();
        let m = FiniteActivityModel::from_strings(&["-x"], 1.0, "1+0.5*tanh(x)+0.2*x^2", j).unwrap();
        let rule = JumpTermRule::new(&m, JumpQuadSpec::default());
        let h = 1e-5;
        for x in [-0.6, 0.1, 0.9] {
            let t = rule.eval(&m, &[x], true);
            let (p, q) = (rule.eval(&m, &[x + h], false), rule.eval(&m, &[x - h], false));
            let fd_ell = (p.ell[0] - q.ell[0]) / (2.0 * h);
            assert!((t.div_ell - fd_ell).abs() < 1e-7 * (1.0 + fd_ell.abs()));
            assert!((t.jac_ell[0][0] - fd_ell).abs() < 1e-7 * (1.0 + fd_ell.abs()));
            let fd_div = (p.div_ell - q.div_ell) / (2.0 * h);
            assert!((t.grad_div_ell[0] - fd_div).abs() < 1e-6 * (1.0 + fd_div.abs()));
            let fd_tilde = (p.ell_tilde - q.ell_tilde) / (2.0 * h);
            assert!((t.grad_ell_tilde[0] - fd_tilde).abs() < 1e-6 * (1.0 + fd_tilde.abs()));
        }
    }

    #[test]
    fn reduction_to_classical_action() {
        let m = jump_model("-x", 1.0, "0", 0.8);
        let psi = SmoothPath::parse(&["sin(t)"], 1.0).unwrap();
        let a = om_action(&m, &psi, &OmOptions::default()).unwrap();
        let b = classical_om_action(m.drift_exprs(), 1.0, &psi, &OmOptions::default()).unwrap();
        assert!((a.total - b.total).abs() < 1e-12);
        assert!((a.kinetic - b.kinetic).abs() < 1e-12);
        assert_eq!(a.ell_tilde, 0.0);
    }

    #[test]
    fn flow_line_has_zero_kinetic_term() {
        let m = jump_model("-x", 1.0, "0", 0.8);
        let psi = SmoothPath::parse(&["2*exp(-t)"], 1.0).unwrap();
        let a = om_action(&m, &psi, &OmOptions::default()).unwrap();
        assert!(a.kinetic.abs() < 1e-15);
        assert!((a.total + 0.5).abs() < 1e-14);
    }

    #[test]
    fn straight_line_brownian_action() {
        let psi = SmoothPath::parse(&["0.8*t"], 1.0).unwrap();
        let b = [ExpressionAst::parse("0", &["x"]).unwrap()];
        let e = classical_om_action(&b, 1.0, &psi, &OmOptions::default()).unwrap();
        assert!((e.total - 0.32).abs() < 1e-14);
    }

    #[test]
    fn ou_line_against_dense_trapezoid() {
        // ψ = 1 - t, b = -x: integrand ½((-1) + (1 - t))² - ½
        let psi = SmoothPath::parse(&["1-t"], 1.0).unwrap();
        let b = [ExpressionAst::parse("-x", &["x"]).unwrap()];
        let e = classical_om_action(&b, 1.0, &psi, &OmOptions::default()).unwrap();
        let n = 1_000_000;
        let f = |t: f64| 0.5 * (-t) * (-t) - 0.5;
        let h = 1.0 / n as f64;
        let trap: f64 = (0..=n)
            .map(|i| {
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                w * f(i as f64 * h)
            })
            .sum::<f64>()
            * h;
        assert!((e.total - trap).abs() < 1e-8, "{} vs {trap}", e.total);
    }

    #[test]
    fn additivity_in_time() {
        let m = jump_model("-x", 0.7, "1+0.5*tanh(x)", 0.8);
        let whole = SmoothPath::parse(&["sin(t)"], 1.0).unwrap();
        let first = SmoothPath::parse(&["sin(t)"], 0.5).unwrap();
        let second = SmoothPath::parse(&["sin(t+0.5)"], 0.5).unwrap();
        let o = OmOptions::default();
        let s = om_action(&m, &whole, &o).unwrap().total;
        let s1 = om_action(&m, &first, &o).unwrap().total;
        let s2 = om_action(&m, &second, &o).unwrap().total;
        assert!((s - s1 - s2).abs() < 1e-10 * s.abs().max(1.0));
    }

    #[test]
    fn spline_reproduces_cubic_interior() {
        let n = 40;
        let knots: Vec<f64> = (0..=n).map(|i| (i as f64 / n as f64).sin()).collect();
        let sp = SplinePath::new(&knots, 1, 1.0).unwrap();
        let mut x = [0.0];
        let mut v = [0.0];
        sp.eval(0.5123, &mut x, &mut v);
        assert!((x[0] - 0.5123f64.sin()).abs() < 1e-5);
        assert!((v[0] - 0.5123f64.cos()).abs() < 1e-3);
        sp.eval(1.0, &mut x, &mut v);
        assert!((x[0] - 1f64.sin()).abs() < 1e-14);
    }

    #[test]
    fn start_point_check() {
        let psi = SmoothPath::parse(&["1+t"], 1.0).unwrap();
        assert!(psi.check_start(&[1.0]).is_ok());
        assert!(psi.check_start(&[0.0]).is_err());
        assert!(SmoothPath::parse(&["x"], 1.0).is_err());
    }
}
