//! Model objects and their numerical audits.
//!
//! [`FiniteActivityModel`] is the compound-Poisson jump-diffusion
//! `dX = b(X-) dt + σ dB + J dN` with state-dependent rate `λ(X-)` and
//! jump sizes drawn from a compactly supported [`JumpSizeDensity`].
//! [`InfiniteActivityModel`] is the scalar process with generator
//! `b f' + σ²/2 f'' + ∫ (f(x + F(x,z)) - f(x) - 1{|z|<1} F(x,z) f'(x)) ν(x,z) dz`.
//!
//! Validation never proves anything; it samples the analytic conditions on
//! a grid and reports witnesses.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{ExprError, ExpressionAst};
use crate::quad::GaussLegendre;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("expression error in `{field}`: {source}")]
    Expr {
        field: String,
        #[source]
        source: ExprError,
    },
    #[error("jump density integrates to {integral} (|error| > 1e-10)")]
    Normalization { integral: f64 },
}

/// Variable names used for state coordinates.
pub fn state_vars(dim: usize) -> &'static [&'static str] {
    match dim {
        1 => &["x"],
        2 => &["x1", "x2"],
        _ => panic!("only dimensions 1 and 2 are supported"),
    }
}

pub(crate) fn parse_field(
    field: &str,
    text: &str,
    vars: &[&str],
) -> Result<ExpressionAst, ModelError> {
    ExpressionAst::parse(text, vars).map_err(|source| ModelError::Expr {
        field: field.to_string(),
        source,
    })
}

/// Jump-size density family with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum JumpFamily {
    /// `c exp(-1 / (1 - |z/a|²))` on the ball `|z| < a`.
    Bump { a: f64 },
    /// Gaussian with scale `s` (optionally shifted by `mean`) restricted to
    /// the box `[-a, a]^d` and renormalized.
    TruncatedGaussian {
        s: f64,
        a: f64,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        mean: Vec<f64>,
    },
}

/// A quadrature node of the jump-size measure: `∫ f(z) ν_J(dz) ≈ Σ weight f(z)`.
#[derive(Debug, Clone, Copy)]
pub struct JumpNode {
    pub z: [f64; 2],
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JumpSizeDensity {
    family: JumpFamily,
    dim: usize,
    norm: f64,
    mean: [f64; 2],
}

impl JumpSizeDensity {
    pub fn new(family: JumpFamily, dim: usize) -> Result<Self, ModelError> {
        if !(1..=2).contains(&dim) {
            return Err(ModelError::InvalidParameter(format!(
                "dimension {dim} not supported (1 or 2)"
            )));
        }
        let mut mean = [0.0; 2];
        let norm = match &family {
            JumpFamily::Bump { a } => {
                if !(*a > 0.0 && a.is_finite()) {
                    return Err(ModelError::InvalidParameter(format!("bump radius a = {a}")));
                }
                1.0 / bump_mass(*a, dim, 400)
            }
            JumpFamily::TruncatedGaussian { s, a, mean: m } => {
                if !(*s > 0.0 && *a > 0.0) {
                    return Err(ModelError::InvalidParameter(format!(
                        "truncated gaussian needs s > 0 and a > 0 (s = {s}, a = {a})"
                    )));
                }
                if !m.is_empty() && m.len() != dim {
                    return Err(ModelError::InvalidParameter(format!(
                        "mean has {} components for dimension {dim}",
                        m.len()
                    )));
                }
                for (k, &mk) in m.iter().enumerate() {
                    if mk.abs() >= *a {
                        return Err(ModelError::InvalidParameter(format!(
                            "mean component {mk} outside the support (-{a}, {a})"
                        )));
                    }
                    mean[k] = mk;
                }
                let mut mass = 1.0;
                for &mk in mean.iter().take(dim) {
                    mass *= truncated_gaussian_mass_1d(*s, *a, mk);
                }
                1.0 / mass
            }
        };
        let density = JumpSizeDensity {
            family,
            dim,
            norm,
            mean,
        };
        let integral = density.total_mass();
        if (integral - 1.0).abs() > 1e-10 {
            return Err(ModelError::Normalization { integral });
        }
        if density.density(&[0.0, 0.0][..dim]) <= 0.0 {
            return Err(ModelError::InvalidParameter(
                "jump density must be positive at the origin".into(),
            ));
        }
        Ok(density)
    }

    pub fn bump(a: f64) -> Result<Self, ModelError> {
        Self::new(JumpFamily::Bump { a }, 1)
    }

    pub fn truncated_gaussian(s: f64, a: f64) -> Result<Self, ModelError> {
        Self::new(
            JumpFamily::TruncatedGaussian {
                s,
                a,
                mean: Vec::new(),
            },
            1,
        )
    }

    pub fn family(&self) -> &JumpFamily {
        &self.family
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn normalization(&self) -> f64 {
        self.norm
    }

    pub fn support_radius(&self) -> f64 {
        match self.family {
            JumpFamily::Bump { a } | JumpFamily::TruncatedGaussian { a, .. } => a,
        }
    }

    pub fn is_symmetric(&self) -> bool {
        self.mean.iter().all(|&m| m == 0.0)
    }

    pub fn in_support(&self, z: &[f64]) -> bool {
        match self.family {
            JumpFamily::Bump { a } => z.iter().map(|v| v * v).sum::<f64>() < a * a,
            JumpFamily::TruncatedGaussian { a, .. } => z.iter().all(|v| v.abs() <= a),
        }
    }

    #[inline]
    pub fn density(&self, z: &[f64]) -> f64 {
        match self.family {
            JumpFamily::Bump { a } => {
                let r2 = z.iter().map(|v| v * v).sum::<f64>() / (a * a);
                if r2 >= 1.0 {
                    0.0
                } else {
                    self.norm * (-1.0 / (1.0 - r2)).exp()
                }
            }
            JumpFamily::TruncatedGaussian { s, a, .. } => {
                let mut q = 0.0;
                for (k, &v) in z.iter().enumerate() {
                    if v.abs() > a {
                        return 0.0;
                    }
                    let u = v - self.mean[k];
                    q += u * u;
                }
                self.norm * (-0.5 * q / (s * s)).exp()
            }
        }
    }

    /// Density and its gradient at `z` (a.e. gradient; zero outside the support).
    #[inline]
    pub fn density_and_gradient(&self, z: &[f64], grad: &mut [f64]) -> f64 {
        let v = self.density(z);
        if v == 0.0 {
            grad.iter_mut().for_each(|g| *g = 0.0);
            return 0.0;
        }
        match self.family {
            JumpFamily::Bump { a } => {
                let r2 = z.iter().map(|v| v * v).sum::<f64>() / (a * a);
                let one_minus = 1.0 - r2;
                let factor = -2.0 / (a * a * one_minus * one_minus);
                for (g, zk) in grad.iter_mut().zip(z) {
                    *g = v * factor * zk;
                }
            }
            JumpFamily::TruncatedGaussian { s, .. } => {
                for (k, (g, zk)) in grad.iter_mut().zip(z).enumerate() {
                    *g = -v * (zk - self.mean[k]) / (s * s);
                }
            }
        }
        v
    }

    /// Maximum of the density (rejection envelope).
    pub fn envelope(&self) -> f64 {
        match self.family {
            JumpFamily::Bump { .. } => self.norm * (-1.0f64).exp(),
            JumpFamily::TruncatedGaussian { .. } => self.norm,
        }
    }

    /// Tensor Gauss–Legendre rule on `[-a, a]^d` with the density folded into
    /// the weights. Nodes where the density vanishes are dropped.
    pub fn quadrature(&self, nodes_per_dim: usize) -> Vec<JumpNode> {
        let a = self.support_radius();
        let gl = GaussLegendre::new(nodes_per_dim).on_interval(-a, a);
        let mut out = Vec::with_capacity(gl.len().pow(self.dim as u32));
        match self.dim {
            1 => {
                for &(z, w) in &gl {
                    let dens = self.density(&[z]);
                    if dens > 0.0 {
                        out.push(JumpNode {
                            z: [z, 0.0],
                            weight: w * dens,
                        });
                    }
                }
            }
            _ => {
                for &(z1, w1) in &gl {
                    for &(z2, w2) in &gl {
                        let dens = self.density(&[z1, z2]);
                        if dens > 0.0 {
                            out.push(JumpNode {
                                z: [z1, z2],
                                weight: w1 * w2 * dens,
                            });
                        }
                    }
                }
            }
        }
        out
    }

    /// ∫ ν_J by a high-order composite rule independent of the
    /// normalization path.
    pub fn total_mass(&self) -> f64 {
        match self.family {
            JumpFamily::Bump { a } => self.norm * bump_mass(a, self.dim, 257),
            JumpFamily::TruncatedGaussian { a, .. } => {
                let gl = GaussLegendre::new(20);
                let rule = gl.composite(-a, a, 40);
                match self.dim {
                    1 => rule.iter().map(|&(z, w)| w * self.density(&[z])).sum(),
                    _ => rule
                        .iter()
                        .map(|&(z1, w1)| {
                            rule.iter()
                                .map(|&(z2, w2)| w1 * w2 * self.density(&[z1, z2]))
                                .sum::<f64>()
                        })
                        .sum(),
                }
            }
        }
    }

    /// Mean jump `∫ z ν_J(dz)` restricted to `|z| < 1`.
    pub fn small_jump_mean(&self) -> [f64; 2] {
        let mut m = [0.0; 2];
        for node in self.quadrature(64) {
            let r2: f64 = node.z[..self.dim].iter().map(|v| v * v).sum();
            if r2 < 1.0 {
                for k in 0..self.dim {
                    m[k] += node.weight * node.z[k];
                }
            }
        }
        m
    }
}

/// Unnormalized mass of `exp(-1/(1-|z/a|²))` over the ball of radius `a`.
fn bump_mass(a: f64, dim: usize, panels: usize) -> f64 {
    let gl = GaussLegendre::new(16);
    let profile = |r: f64| {
        if r >= 1.0 {
            0.0
        } else {
            (-1.0 / (1.0 - r * r)).exp()
        }
    };
    match dim {
        1 => {
            let half: f64 = gl
                .composite(0.0, 1.0, panels)
                .into_iter()
                .map(|(r, w)| w * profile(r))
                .sum();
            2.0 * a * half
        }
        _ => {
            let radial: f64 = gl
                .composite(0.0, 1.0, panels)
                .into_iter()
                .map(|(r, w)| w * r * profile(r))
                .sum();
            2.0 * std::f64::consts::PI * a * a * radial
        }
    }
}

fn truncated_gaussian_mass_1d(s: f64, a: f64, mean: f64) -> f64 {
    use statrs::function::erf::erf;
    let k = s * std::f64::consts::SQRT_2;
    s * (std::f64::consts::PI / 2.0).sqrt() * (erf((a - mean) / k) - erf((-a - mean) / k))
}

/// Box grid used for audits and solvers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// Nodes per dimension.
    pub n: usize,
}

impl GridSpec {
    pub fn new_1d(lo: f64, hi: f64, n: usize) -> Self {
        GridSpec {
            lo: vec![lo],
            hi: vec![hi],
            n,
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn check(&self) -> Result<(), ModelError> {
        if self.lo.len() != self.hi.len() || self.lo.is_empty() || self.lo.len() > 2 {
            return Err(ModelError::InvalidParameter(
                "grid bounds must have 1 or 2 matching components".into(),
            ));
        }
        if self.n < 2 || self.lo.iter().zip(&self.hi).any(|(l, h)| !(h > l)) {
            return Err(ModelError::InvalidParameter("degenerate grid".into()));
        }
        Ok(())
    }

    pub fn spacing(&self, k: usize) -> f64 {
        (self.hi[k] - self.lo[k]) / (self.n - 1) as f64
    }

    pub fn width(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| h - l)
            .fold(f64::INFINITY, f64::min)
    }

    /// All grid points in row-major order.
    pub fn points(&self) -> Vec<[f64; 2]> {
        let axis = |k: usize| -> Vec<f64> {
            (0..self.n)
                .map(|i| self.lo[k] + i as f64 * self.spacing(k))
                .collect()
        };
        match self.dim() {
            1 => axis(0).into_iter().map(|x| [x, 0.0]).collect(),
            _ => {
                let (ax, ay) = (axis(0), axis(1));
                ax.iter()
                    .flat_map(|&x| ay.iter().map(move |&y| [x, y]))
                    .collect()
            }
        }
    }
}

/// `dX = b(X-) dt + σ dB + J dN` with `N` of intensity `λ(X-)` and `J ~ ν_J`.
#[derive(Debug, Clone)]
pub struct FiniteActivityModel {
    dim: usize,
    drift: Vec<ExpressionAst>,
    sigma: f64,
    lambda: ExpressionAst,
    jump: JumpSizeDensity,
    // Symbolic derivatives, built once.
    drift_jacobian: Vec<Vec<ExpressionAst>>,
    drift_divergence: ExpressionAst,
    drift_divergence_grad: Vec<ExpressionAst>,
    lambda_grad: Vec<ExpressionAst>,
    lambda_hessian: Vec<Vec<ExpressionAst>>,
}

impl FiniteActivityModel {
    pub fn new(
        drift: Vec<ExpressionAst>,
        sigma: f64,
        lambda: ExpressionAst,
        jump: JumpSizeDensity,
    ) -> Result<Self, ModelError> {
        let dim = drift.len();
        if !(1..=2).contains(&dim) {
            return Err(ModelError::InvalidParameter(format!(
                "drift has {dim} components; dimension must be 1 or 2"
            )));
        }
        if jump.dim() != dim {
            return Err(ModelError::InvalidParameter(format!(
                "jump density dimension {} differs from state dimension {dim}",
                jump.dim()
            )));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(ModelError::InvalidParameter(format!(
                "sigma must be positive, got {sigma}"
            )));
        }
        let vars = state_vars(dim);
        for (k, b) in drift.iter().enumerate() {
            if b.free_variables() != vars {
                return Err(ModelError::InvalidParameter(format!(
                    "drift component {k} must use variables {vars:?}"
                )));
            }
        }
        if lambda.free_variables() != vars {
            return Err(ModelError::InvalidParameter(format!(
                "jump rate must use variables {vars:?}"
            )));
        }
        let drift_jacobian: Vec<Vec<ExpressionAst>> = drift
            .iter()
            .map(|b| (0..dim).map(|j| b.differentiate_index(j)).collect())
            .collect();
        let mut drift_divergence = drift_jacobian[0][0].clone();
        for (k, row) in drift_jacobian.iter().enumerate().skip(1) {
            drift_divergence = drift_divergence.add_scaled(&row[k], 1.0);
        }
        let drift_divergence_grad = (0..dim)
            .map(|j| drift_divergence.differentiate_index(j))
            .collect();
        let lambda_grad: Vec<ExpressionAst> =
            (0..dim).map(|j| lambda.differentiate_index(j)).collect();
        let lambda_hessian = lambda_grad
            .iter()
            .map(|g| (0..dim).map(|j| g.differentiate_index(j)).collect())
            .collect();
        Ok(FiniteActivityModel {
            dim,
            drift,
            sigma,
            lambda,
            jump,
            drift_jacobian,
            drift_divergence,
            drift_divergence_grad,
            lambda_grad,
            lambda_hessian,
        })
    }

    /// Convenience constructor from expression strings.
    pub fn from_strings(
        drift: &[&str],
        sigma: f64,
        lambda: &str,
        jump: JumpSizeDensity,
    ) -> Result<Self, ModelError> {
        let vars = state_vars(drift.len().clamp(1, 2));
        let drift = drift
            .iter()
            .enumerate()
            .map(|(k, s)| parse_field(&format!("drift[{k}]"), s, vars))
            .collect::<Result<Vec<_>, _>>()?;
        let lambda = parse_field("lambda", lambda, vars)?;
        Self::new(drift, sigma, lambda, jump)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn jump(&self) -> &JumpSizeDensity {
        &self.jump
    }

    pub fn drift_exprs(&self) -> &[ExpressionAst] {
        &self.drift
    }

    pub fn lambda_expr(&self) -> &ExpressionAst {
        &self.lambda
    }

    /// True when the jump rate folded to the constant 0.
    pub fn is_jump_free(&self) -> bool {
        self.lambda.is_zero()
    }

    #[inline]
    pub fn drift_at(&self, x: &[f64], out: &mut [f64]) {
        for (o, b) in out.iter_mut().zip(&self.drift) {
            *o = b.eval(x);
        }
    }

    #[inline]
    pub fn lambda_at(&self, x: &[f64]) -> f64 {
        self.lambda.eval(x)
    }

    #[inline]
    pub fn lambda_grad_at(&self, x: &[f64], out: &mut [f64]) {
        for (o, g) in out.iter_mut().zip(&self.lambda_grad) {
            *o = g.eval(x);
        }
    }

    #[inline]
    pub fn lambda_hessian_at(&self, x: &[f64], i: usize, j: usize) -> f64 {
        self.lambda_hessian[i][j].eval(x)
    }

    pub fn lambda_is_constant(&self) -> bool {
        self.lambda.as_constant().is_some()
    }

    #[inline]
    pub fn drift_jacobian_at(&self, x: &[f64], i: usize, j: usize) -> f64 {
        self.drift_jacobian[i][j].eval(x)
    }

    #[inline]
    pub fn drift_divergence_at(&self, x: &[f64]) -> f64 {
        self.drift_divergence.eval(x)
    }

    #[inline]
    pub fn drift_divergence_grad_at(&self, x: &[f64], out: &mut [f64]) {
        for (o, g) in out.iter_mut().zip(&self.drift_divergence_grad) {
            *o = g.eval(x);
        }
    }

    /// Same model with the jump rate multiplied by `factor`.
    pub fn with_scaled_rate(&self, factor: f64) -> Self {
        let zero = ExpressionAst::constant(0.0, state_vars(self.dim));
        let lambda = zero.add_scaled(&self.lambda, factor);
        Self::new(self.drift.clone(), self.sigma, lambda, self.jump.clone())
            .expect("scaling the rate keeps a valid model")
    }

    /// Same drift, noise and jumps with a different rate expression.
    pub fn with_rate(&self, lambda: ExpressionAst) -> Result<Self, ModelError> {
        Self::new(self.drift.clone(), self.sigma, lambda, self.jump.clone())
    }
}

/// One audited condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub min: f64,
    pub max: f64,
    /// Grid point where the condition is tightest (or first violated).
    pub witness: Option<Vec<f64>>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

impl ValidationReport {
    fn from_checks(checks: Vec<CheckResult>) -> Self {
        ValidationReport {
            passed: checks.iter().all(|c| c.passed),
            checks,
        }
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            s.push_str(&format!(
                "[{}] {:<28} min={:<12.6e} max={:<12.6e} {}{}\n",
                if c.passed { "pass" } else { "FAIL" },
                c.name,
                c.min,
                c.max,
                c.detail,
                c.witness
                    .as_ref()
                    .map(|w| format!(" witness={w:?}"))
                    .unwrap_or_default()
            ));
        }
        s.push_str(if self.passed {
            "validation passed\n"
        } else {
            "validation FAILED\n"
        });
        s
    }
}

/// Tracks min/max of a sampled quantity plus the argmin point.
struct Extremes {
    min: f64,
    max: f64,
    at_min: Vec<f64>,
    first_bad: Option<Vec<f64>>,
}

impl Extremes {
    fn new() -> Self {
        Extremes {
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
            at_min: Vec::new(),
            first_bad: None,
        }
    }

    fn push(&mut self, v: f64, at: &[f64], ok: bool) {
        if v < self.min || self.at_min.is_empty() || v.is_nan() {
            self.min = if v.is_nan() { f64::NAN } else { v };
            self.at_min = at.to_vec();
        }
        if v > self.max {
            self.max = v;
        }
        if !ok && self.first_bad.is_none() {
            self.first_bad = Some(at.to_vec());
        }
    }

    fn finish(self, name: &str, detail: String) -> CheckResult {
        let passed = self.first_bad.is_none();
        CheckResult {
            name: name.to_string(),
            passed,
            min: self.min,
            max: self.max,
            witness: Some(self.first_bad.unwrap_or(self.at_min)),
            detail,
        }
    }
}

/// Options for [`validate_finite_model`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiniteValidationOptions {
    /// Accept `λ ≥ 0` instead of `λ > 0` (degenerate pure-diffusion tests).
    pub allow_zero_rate: bool,
    /// Require the jump support radius to be at most this fraction of the
    /// narrowest box side.
    pub max_support_fraction: f64,
}

impl Default for FiniteValidationOptions {
    fn default() -> Self {
        FiniteValidationOptions {
            allow_zero_rate: false,
            max_support_fraction: 0.25,
        }
    }
}

pub fn validate_finite_model(
    m: &FiniteActivityModel,
    grid: &GridSpec,
    opts: FiniteValidationOptions,
) -> Result<ValidationReport, ModelError> {
    grid.check()?;
    if grid.dim() != m.dim() {
        return Err(ModelError::InvalidParameter(format!(
            "grid dimension {} differs from model dimension {}",
            grid.dim(),
            m.dim()
        )));
    }
    let d = m.dim();
    let mut checks = Vec::new();
    checks.push(CheckResult {
        name: "sigma_positive".into(),
        passed: m.sigma() > 0.0,
        min: m.sigma(),
        max: m.sigma(),
        witness: None,
        detail: "noise amplitude".into(),
    });

    let mut rate = Extremes::new();
    let mut drift = Extremes::new();
    let mut b = [0.0; 2];
    for p in grid.points() {
        let x = &p[..d];
        let l = m.lambda_at(x);
        let ok = if opts.allow_zero_rate {
            l >= 0.0
        } else {
            l > 0.0
        };
        rate.push(l, x, ok && l.is_finite());
        m.drift_at(x, &mut b[..d]);
        let bmax = b[..d].iter().map(|v| v.abs()).fold(0.0, f64::max);
        drift.push(bmax, x, bmax.is_finite());
    }
    checks.push(rate.finish(
        "rate_positive",
        if opts.allow_zero_rate {
            "lambda(x) >= 0 on grid".into()
        } else {
            "lambda(x) > 0 on grid".into()
        },
    ));
    let mut dcheck = drift.finish("drift_finite", "max |b(x)| on grid".into());
    // for drift the interesting witness is the largest value
    dcheck.witness = dcheck.witness.filter(|_| !dcheck.passed);
    checks.push(dcheck);

    let mass = m.jump().total_mass();
    checks.push(CheckResult {
        name: "jump_normalization".into(),
        passed: (mass - 1.0).abs() <= 1e-10,
        min: mass,
        max: mass,
        witness: None,
        detail: "integral of nu_J".into(),
    });
    let origin = m.jump().density(&[0.0, 0.0][..d]);
    checks.push(CheckResult {
        name: "jump_density_at_origin".into(),
        passed: origin > 0.0,
        min: origin,
        max: origin,
        witness: None,
        detail: "nu_J(0) > 0".into(),
    });
    let frac = m.jump().support_radius() / grid.width();
    checks.push(CheckResult {
        name: "support_vs_box".into(),
        passed: frac <= opts.max_support_fraction,
        min: frac,
        max: frac,
        witness: None,
        detail: format!(
            "support radius / box width <= {}",
            opts.max_support_fraction
        ),
    });
    Ok(ValidationReport::from_checks(checks))
}

/// Jump intensity of the scalar infinite-activity model.
#[derive(Debug, Clone)]
pub enum LevyIntensity {
    /// `ν(x,z)` and a dominating density `g(z)`, both expressions.
    Expression {
        nu: ExpressionAst,
        dominating: ExpressionAst,
    },
    /// Finite-activity embedding `ν(x,z) = λ(x) ν_J(z)`.
    Embedded {
        lambda: ExpressionAst,
        jump: JumpSizeDensity,
        /// Upper bound of `λ` used as the dominating constant.
        lambda_bound: f64,
    },
}

/// Scalar jump-diffusion with jump map `F(x,z)` and Lévy density `ν(x,z)`.
#[derive(Debug, Clone)]
pub struct InfiniteActivityModel {
    drift: ExpressionAst,
    drift_prime: ExpressionAst,
    sigma: f64,
    jump_map: ExpressionAst,
    jump_map_dx: ExpressionAst,
    jump_map_dz: ExpressionAst,
    intensity: LevyIntensity,
    /// `∂ₓν` for expression intensities, `λ'` for embeddings.
    intensity_dx: ExpressionAst,
    alpha: f64,
}

impl InfiniteActivityModel {
    pub fn new(
        drift: ExpressionAst,
        sigma: f64,
        jump_map: ExpressionAst,
        intensity: LevyIntensity,
        alpha: f64,
    ) -> Result<Self, ModelError> {
        if drift.free_variables() != ["x"] {
            return Err(ModelError::InvalidParameter(
                "drift must be an expression in x".into(),
            ));
        }
        if jump_map.free_variables() != ["x", "z"] {
            return Err(ModelError::InvalidParameter(
                "jump map must be an expression in (x, z)".into(),
            ));
        }
        match &intensity {
            LevyIntensity::Expression { nu, dominating } => {
                if nu.free_variables() != ["x", "z"] || dominating.free_variables() != ["z"] {
                    return Err(ModelError::InvalidParameter(
                        "nu must use (x, z) and the dominating density z".into(),
                    ));
                }
            }
            LevyIntensity::Embedded { lambda, jump, .. } => {
                if lambda.free_variables() != ["x"] || jump.dim() != 1 {
                    return Err(ModelError::InvalidParameter(
                        "embedded intensity needs a scalar rate in x and a 1D jump density".into(),
                    ));
                }
            }
        }
        if !(sigma > 0.0) {
            return Err(ModelError::InvalidParameter(format!("sigma = {sigma}")));
        }
        if !(alpha > 0.0 && alpha < 2.0) {
            return Err(ModelError::InvalidParameter(format!(
                "stability index alpha = {alpha} outside (0, 2)"
            )));
        }
        let intensity_dx = match &intensity {
            LevyIntensity::Expression { nu, .. } => nu.differentiate_index(0),
            LevyIntensity::Embedded { lambda, .. } => lambda.differentiate_index(0),
        };
        Ok(InfiniteActivityModel {
            intensity_dx,
            drift_prime: drift.differentiate_index(0),
            drift,
            sigma,
            jump_map_dx: jump_map.differentiate_index(0),
            jump_map_dz: jump_map.differentiate_index(1),
            jump_map,
            intensity,
            alpha,
        })
    }

    pub fn from_strings(
        drift: &str,
        sigma: f64,
        jump_map: &str,
        nu: &str,
        dominating: &str,
        alpha: f64,
    ) -> Result<Self, ModelError> {
        Self::new(
            parse_field("drift", drift, &["x"])?,
            sigma,
            parse_field("jump_map", jump_map, &["x", "z"])?,
            LevyIntensity::Expression {
                nu: parse_field("nu", nu, &["x", "z"])?,
                dominating: parse_field("dominating", dominating, &["z"])?,
            },
            alpha,
        )
    }

    /// Embeds a scalar finite-activity model with `F(x,z) = z` and
    /// `ν(x,z) = λ(x) ν_J(z)`. The drift is shifted by the small-jump
    /// compensator `λ(x) ∫_{|z|<1} z ν_J(dz)` so both generators agree.
    pub fn embed_finite(m: &FiniteActivityModel, lambda_bound: f64) -> Result<Self, ModelError> {
        if m.dim() != 1 {
            return Err(ModelError::InvalidParameter(
                "only scalar models can be embedded".into(),
            ));
        }
        let comp = m.jump().small_jump_mean()[0];
        let drift = m.drift_exprs()[0].add_scaled(m.lambda_expr(), comp);
        Self::new(
            drift,
            m.sigma(),
            parse_field("jump_map", "z", &["x", "z"])?,
            LevyIntensity::Embedded {
                lambda: m.lambda_expr().clone(),
                jump: m.jump().clone(),
                lambda_bound,
            },
            // the compound-Poisson case has no small-jump singularity; alpha
            // only matters for the small-jump ratio check, which is skipped for embeddings
            1.0,
        )
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn intensity(&self) -> &LevyIntensity {
        &self.intensity
    }

    pub fn is_embedded(&self) -> bool {
        matches!(self.intensity, LevyIntensity::Embedded { .. })
    }

    #[inline]
    pub fn drift(&self, x: f64) -> f64 {
        self.drift.eval(&[x])
    }

    #[inline]
    pub fn drift_prime(&self, x: f64) -> f64 {
        self.drift_prime.eval(&[x])
    }

    #[inline]
    pub fn jump_map(&self, x: f64, z: f64) -> f64 {
        self.jump_map.eval(&[x, z])
    }

    #[inline]
    pub fn jump_map_dx(&self, x: f64, z: f64) -> f64 {
        self.jump_map_dx.eval(&[x, z])
    }

    #[inline]
    pub fn jump_map_dz(&self, x: f64, z: f64) -> f64 {
        self.jump_map_dz.eval(&[x, z])
    }

    pub fn jump_map_expr(&self) -> &ExpressionAst {
        &self.jump_map
    }

    #[inline]
    pub fn nu(&self, x: f64, z: f64) -> f64 {
        match &self.intensity {
            LevyIntensity::Expression { nu, .. } => nu.eval(&[x, z]),
            LevyIntensity::Embedded { lambda, jump, .. } => lambda.eval(&[x]) * jump.density(&[z]),
        }
    }

    #[inline]
    pub fn nu_dx(&self, x: f64, z: f64) -> f64 {
        match &self.intensity {
            LevyIntensity::Expression { .. } => self.intensity_dx.eval(&[x, z]),
            LevyIntensity::Embedded { jump, .. } => self.intensity_dx.eval(&[x]) * jump.density(&[z]),
        }
    }

    #[inline]
    pub fn dominating(&self, z: f64) -> f64 {
        match &self.intensity {
            LevyIntensity::Expression { dominating, .. } => dominating.eval(&[z]),
            LevyIntensity::Embedded {
                jump, lambda_bound, ..
            } => lambda_bound * jump.density(&[z]),
        }
    }

    /// Where `ν(x, ·)` can be nonzero: `Some(a)` for compact support `[-a, a]`.
    pub fn compact_support(&self) -> Option<f64> {
        match &self.intensity {
            LevyIntensity::Embedded { jump, .. } => Some(jump.support_radius()),
            LevyIntensity::Expression { .. } => None,
        }
    }
}

/// Sample locations for [`validate_infinite_model`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfiniteValidationGrid {
    pub x_lo: f64,
    pub x_hi: f64,
    pub nx: usize,
    /// `z` annulus `z_min <= |z| <= z_max` used for the domination and jump-map derivative checks.
    pub z_min: f64,
    pub z_max: f64,
    pub nz: usize,
    /// Near-zero band `band_lo <= |z| <= band_hi` for the small-jump ratio check.
    pub band_lo: f64,
    pub band_hi: f64,
    pub nband: usize,
}

impl Default for InfiniteValidationGrid {
    fn default() -> Self {
        InfiniteValidationGrid {
            x_lo: -3.0,
            x_hi: 3.0,
            nx: 61,
            z_min: 0.05,
            z_max: 3.0,
            nz: 60,
            band_lo: 1e-4,
            band_hi: 1e-2,
            nband: 25,
        }
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

fn geomspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    linspace(lo.ln(), hi.ln(), n)
        .into_iter()
        .map(f64::exp)
        .collect()
}

pub fn validate_infinite_model(
    m: &InfiniteActivityModel,
    grid: &InfiniteValidationGrid,
    eta: f64,
) -> Result<ValidationReport, ModelError> {
    if !(grid.x_hi > grid.x_lo && grid.z_max > grid.z_min && grid.z_min > 0.0) {
        return Err(ModelError::InvalidParameter("degenerate validation grid".into()));
    }
    if !(grid.band_lo > 0.0 && grid.band_hi > grid.band_lo) {
        return Err(ModelError::InvalidParameter("degenerate near-zero band".into()));
    }
    let xs = linspace(grid.x_lo, grid.x_hi, grid.nx);
    let mags = linspace(grid.z_min, grid.z_max, grid.nz);
    let band = geomspace(grid.band_lo, grid.band_hi, grid.nband);
    let zs: Vec<f64> = mags
        .iter()
        .chain(band.iter())
        .flat_map(|&r| [r, -r])
        .collect();
    let support = m.compact_support();
    let in_support = |z: f64| support.map_or(true, |a| z.abs() < a);

    let mut c3a = Extremes::new();
    let mut c3b = Extremes::new();
    let mut c3c = Extremes::new();
    let mut c1a = Extremes::new();
    let mut pos = Extremes::new();
    for &x in &xs {
        let f0 = m.jump_map(x, 0.0);
        c3a.push(f0.abs(), &[x, 0.0], f0.abs() <= 1e-12);
        for &z in &zs {
            let at = [x, z];
            let d2 = m.jump_map_dz(x, z).abs();
            c3b.push(d2, &at, d2 > eta);
            let d1 = (1.0 + m.jump_map_dx(x, z)).abs();
            c3c.push(d1, &at, d1 > eta);
            if in_support(z) {
                let nu = m.nu(x, z);
                let g = m.dominating(z);
                let excess = nu - g;
                c1a.push(excess, &at, excess <= 1e-12 * g.abs().max(1.0));
                pos.push(nu, &at, nu > 0.0 && nu.is_finite());
            }
        }
    }
    let mut checks = vec![
        c3a.finish("jump_map_vanishes_at_zero", "|F(x,0)| <= 1e-12".into()),
        c3b.finish("jump_map_dz_bounded_below", format!("|d2 F| > eta = {eta}")),
        c3c.finish("one_plus_jump_map_dx_bounded_below", format!("|1 + d1 F| > eta = {eta}")),
        c1a.finish("nu_dominated", "nu(x,z) - g(z) <= 0".into()),
        pos.finish("nu_positive", "nu(x,z) > 0 on sampled support".into()),
    ];

    if m.is_embedded() {
        checks.push(CheckResult {
            name: "small_jump_ratio_bounded".into(),
            passed: true,
            min: f64::NAN,
            max: f64::NAN,
            witness: None,
            detail: "skipped: finite-activity embedding".into(),
        });
    } else {
        // f(z) = g(z)|z|^{alpha+1} bounded above and below, |z f'(z)| bounded
        let alpha = m.alpha();
        let f = |z: f64| m.dominating(z) * z.abs().powf(alpha + 1.0);
        let mut ratio = Extremes::new();
        let mut slope = Extremes::new();
        for &r in &band {
            for z in [r, -r] {
                let v = f(z);
                ratio.push(v, &[z], v > 0.0 && v.is_finite());
                let h = 1e-3 * r;
                let zf = z * (f(z + h) - f(z - h)) / (2.0 * h);
                slope.push(zf.abs(), &[z], zf.is_finite());
            }
        }
        let mut c4 = ratio.finish(
            "small_jump_ratio_bounded",
            format!("f(z) = g(z)|z|^(alpha+1), alpha = {alpha}"),
        );
        if c4.passed && !(c4.max / c4.min).is_finite() {
            c4.passed = false;
        }
        checks.push(c4);
        checks.push(slope.finish("small_jump_log_slope", "|z f'(z)| finite on band".into()));
    }
    Ok(ValidationReport::from_checks(checks))
}

/// Serializable description of a finite-activity model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteModelSpec {
    /// One expression per dimension.
    pub drift: Vec<String>,
    pub sigma: f64,
    pub lambda: String,
    pub jump: JumpFamily,
}

impl FiniteModelSpec {
    pub fn build(&self) -> Result<FiniteActivityModel, ModelError> {
        let jump = JumpSizeDensity::new(self.jump.clone(), self.drift.len())?;
        let drift: Vec<&str> = self.drift.iter().map(String::as_str).collect();
        FiniteActivityModel::from_strings(&drift, self.sigma, &self.lambda, jump)
    }
}

/// Serializable description of a scalar infinite-activity model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfiniteModelSpec {
    pub drift: String,
    pub sigma: f64,
    pub jump_map: String,
    pub nu: String,
    pub dominating: String,
    pub alpha: f64,
}

impl InfiniteModelSpec {
    pub fn build(&self) -> Result<InfiniteActivityModel, ModelError> {
        InfiniteActivityModel::from_strings(
            &self.drift,
            self.sigma,
            &self.jump_map,
            &self.nu,
            &self.dominating,
            self.alpha,
        )
    }
}
