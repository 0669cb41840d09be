//! Scalar infinite-activity machinery: the partial-jump transport
//! `T(x) = x + θF(x,z)`, the short-time jump kernel `ν_F`, and the discrete
//! OM functional on a time grid.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::InfiniteActivityModel;
use crate::quad::{adaptive_integrate, GaussLegendre};
use crate::sde_sim::DiscretePath;

#[derive(Debug, Error)]
pub enum InfiniteError {
    #[error("cannot invert x + {theta}*F(x, {z}) = {x}: no bracketing interval (is |1 + dF/dx| bounded away from 0?)")]
    Transport { x: f64, theta: f64, z: f64 },
    #[error("path has x_{index} = x_{prev} = {value}; nu_F(y, 0) is undefined, perturb the path")]
    StalledPath { index: usize, prev: usize, value: f64 },
    #[error("nu_F(x_{prev}, x_{index} - x_{prev}) = 0 at increment {increment}; the ratio term is undefined")]
    ZeroKernel { index: usize, prev: usize, increment: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            tol: 1e-12,
            max_iter: 50,
        }
    }
}

/// Safeguarded Newton for an increasing or decreasing `g` on the bracket
/// `[lo, hi]` with `g(lo)`, `g(hi)` of opposite sign.
fn bracketed_newton(
    g: impl Fn(f64) -> (f64, f64),
    mut lo: f64,
    mut hi: f64,
    start: f64,
    opts: NewtonOptions,
) -> f64 {
    let glo = g(lo).0;
    let mut y = start.clamp(lo.min(hi), lo.max(hi));
    for _ in 0..(opts.max_iter + 200) {
        let (v, dv) = g(y);
        if v == 0.0 {
            return y;
        }
        if (v < 0.0) == (glo < 0.0) {
            lo = y;
        } else {
            hi = y;
        }
        let step = y - v / dv;
        let inside = dv != 0.0 && step.is_finite() && step >= lo.min(hi) && step <= lo.max(hi);
        if v.abs() < opts.tol {
            // one polishing step once the residual is within tolerance
            return if inside { step } else { y };
        }
        y = if inside { step } else { 0.5 * (lo + hi) };
        if (hi - lo).abs() <= f64::EPSILON * y.abs().max(1e-300) {
            return y;
        }
    }
    y
}

/// `x ↦ x + θ F(x, z)` for fixed `(θ, z)`.
#[derive(Debug, Clone, Copy)]
pub struct TransportMap<'a> {
    model: &'a InfiniteActivityModel,
    pub theta: f64,
    pub z: f64,
    pub newton: NewtonOptions,
}

impl<'a> TransportMap<'a> {
    pub fn new(model: &'a InfiniteActivityModel, theta: f64, z: f64) -> Self {
        TransportMap {
            model,
            theta,
            z,
            newton: NewtonOptions::default(),
        }
    }

    pub fn forward(&self, y: f64) -> f64 {
        y + self.theta * self.model.jump_map(y, self.z)
    }

    /// `T⁻¹(x)`: Newton from `x - θF(x,z)`, bisection fallback on a
    /// bracketing interval.
    pub fn inverse(&self, x: f64) -> Result<f64, InfiniteError> {
        if self.theta == 0.0 {
            return Ok(x);
        }
        let g = |y: f64| {
            (
                y + self.theta * self.model.jump_map(y, self.z) - x,
                1.0 + self.theta * self.model.jump_map_dx(y, self.z),
            )
        };
        let mut y = x - self.theta * self.model.jump_map(x, self.z);
        for _ in 0..self.newton.max_iter {
            let (v, dv) = g(y);
            if v.abs() < self.newton.tol {
                return Ok(y);
            }
            if dv == 0.0 || !dv.is_finite() {
                break;
            }
            y -= v / dv;
            if !y.is_finite() {
                break;
            }
        }
        let y0 = x - self.theta * self.model.jump_map(x, self.z);
        let err = InfiniteError::Transport {
            x,
            theta: self.theta,
            z: self.z,
        };
        let (lo, hi) = bracket(|y| g(y).0, y0, 1.0 + (x - y0).abs()).ok_or(err)?;
        Ok(bracketed_newton(g, lo, hi, y0, self.newton))
    }

    /// `|J| = 1 / |1 + θ ∂ₓF(T⁻¹(x), z)|`.
    pub fn jacobian(&self, x: f64) -> Result<f64, InfiniteError> {
        let y = self.inverse(x)?;
        Ok(self.jacobian_at_preimage(y))
    }

    fn jacobian_at_preimage(&self, y: f64) -> f64 {
        1.0 / (1.0 + self.theta * self.model.jump_map_dx(y, self.z)).abs()
    }
}

/// Expands `[c - w, c + w]` until `g` changes sign.
fn bracket(g: impl Fn(f64) -> f64, c: f64, mut w: f64) -> Option<(f64, f64)> {
    for _ in 0..80 {
        let (a, b) = (c - w, c + w);
        let (ga, gb) = (g(a), g(b));
        if ga.is_finite() && gb.is_finite() && (ga <= 0.0) != (gb <= 0.0) {
            return Some((a, b));
        }
        w *= 2.0;
    }
    None
}

pub fn invert_transport(tm: &TransportMap, x: f64) -> Result<f64, InfiniteError> {
    tm.inverse(x)
}

/// `ν_F(y, u)` with the root `z*` of `F(y, z*) = u`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NuF {
    pub value: f64,
    pub z_star: Option<f64>,
    /// `u` lies outside the range of `F(y, ·)`.
    pub out_of_range: bool,
}

/// Largest `|z|` searched for roots of `F(y, ·) = u`.
const Z_SEARCH: f64 = 1e8;

/// Root of `F(y, z) = u` on the side of `z = 0` where it must lie for a
/// monotone `F(y, ·)` with `F(y, 0) = 0`.
fn jump_root(m: &InfiniteActivityModel, y: f64, u: f64) -> Option<f64> {
    let slope0 = m.jump_map_dz(y, 0.0);
    let dir = if (u > 0.0) == (slope0 > 0.0) { 1.0 } else { -1.0 };
    let h = |z: f64| m.jump_map(y, z) - u;
    let mut far = dir * u.abs().max(1e-12) / slope0.abs().max(1e-12);
    let mut near = 0.0;
    if h(far) == 0.0 {
        return Some(far);
    }
    while (h(far) < 0.0) == (h(near) < 0.0) {
        near = far;
        far *= 2.0;
        if far.abs() > Z_SEARCH || !h(far).is_finite() {
            return None;
        }
    }
    let g = |z: f64| (m.jump_map(y, z) - u, m.jump_map_dz(y, z));
    Some(bracketed_newton(g, near, far, far, NewtonOptions::default()))
}

/// Change-of-variables form `ν(y, z*) / |∂_z F(y, z*)|`.
pub fn nu_f(m: &InfiniteActivityModel, y: f64, u: f64) -> Result<NuF, InfiniteError> {
    if u == 0.0 {
        return Err(InfiniteError::InvalidInput("nu_F(y, 0) is undefined".into()));
    }
    Ok(match jump_root(m, y, u) {
        Some(z) => NuF {
            value: m.nu(y, z) / m.jump_map_dz(y, z).abs(),
            z_star: Some(z),
            out_of_range: false,
        },
        None => NuF {
            value: 0.0,
            z_star: None,
            out_of_range: true,
        },
    })
}

/// `∫ ν(y, z) dz` over the half-line from `z0` in direction `dir`, summed
/// over doubling segments until they stop contributing.
fn half_line_mass(m: &InfiniteActivityModel, y: f64, z0: f64, dir: f64) -> f64 {
    let mut total = 0.0;
    let mut a = z0;
    let mut len = 0.5f64.max(z0.abs());
    for _ in 0..60 {
        let b = a + dir * len;
        let (lo, hi) = if dir > 0.0 { (a, b) } else { (b, a) };
        let seg = adaptive_integrate(|z| m.nu(y, z), lo, hi, 1e-16, 40);
        total += seg;
        if seg.abs() <= 1e-17 * total.abs().max(1e-300) || seg == 0.0 && total != 0.0 {
            break;
        }
        a = b;
        len *= 2.0;
    }
    total
}

/// Central difference of the jump tail `∫_{F(y,z) ≥ u} ν(y,z) dz` (for
/// `u > 0`; the lower tail for `u < 0`) with step `rel_step·|u|`.
pub fn nu_f_tail_derivative(m: &InfiniteActivityModel, y: f64, u: f64, rel_step: f64) -> Option<f64> {
    let h = rel_step * u.abs();
    let slope0 = m.jump_map_dz(y, 0.0);
    let tail = |v: f64| -> Option<f64> {
        let z = jump_root(m, y, v)?;
        // {F(y,·) ≥ v} for v > 0 lies beyond z* in the direction of growth
        let grow = if slope0 > 0.0 { 1.0 } else { -1.0 };
        let dir = if v > 0.0 { grow } else { -grow };
        Some(half_line_mass(m, y, z, dir))
    };
    let (a, b) = (tail(u - h)?, tail(u + h)?);
    Some(if u > 0.0 { (a - b) / (2.0 * h) } else { (b - a) / (2.0 * h) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomOptions {
    /// Small jumps `|z| < z_cutoff` are dropped; 0 keeps all of a compactly
    /// supported intensity.
    pub z_cutoff: f64,
    /// Largest `|z|`; defaults to the support radius or 8.
    pub z_max: Option<f64>,
    pub theta_nodes: usize,
    /// Gauss–Legendre nodes per z-panel.
    pub z_nodes_per_panel: usize,
    /// Step of the central difference for the nonlocal divergence part.
    pub fd_step: f64,
    /// Re-evaluate the nonlocal integral with doubled node counts and
    /// report the largest relative change.
    pub resolution_check: bool,
}

impl Default for DomOptions {
    fn default() -> Self {
        DomOptions {
            z_cutoff: 1e-3,
            z_max: None,
            theta_nodes: 16,
            z_nodes_per_panel: 16,
            fd_step: 1e-5,
            resolution_check: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomStep {
    pub t: f64,
    pub residual: f64,
    pub kinetic: f64,
    pub divergence: f64,
    /// The nonlocal integral at `x_i`.
    pub nonlocal: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomEvaluation {
    pub total: f64,
    pub kinetic: f64,
    pub divergence: f64,
    pub steps: Vec<DomStep>,
    /// `∫_{|z| < z_cutoff} z² g(z) dz`.
    pub omitted_mass_bound: f64,
    /// Total (θ, z) weight of nodes dropped because `T⁻¹(x_i) = x_{i-1}`.
    pub excluded_measure: f64,
    pub z_nodes: usize,
    pub theta_nodes: usize,
    /// Largest relative change of the nonlocal integral under doubled node
    /// counts; `None` when the check is disabled.
    pub nonlocal_spread: Option<f64>,
    pub warnings: Vec<String>,
}

/// z-nodes and weights: geometric panels `z_cutoff·2^k` on both sides of
/// the origin, with `±1` as an extra break point; four equal panels per
/// side when `z_cutoff = 0`.
fn z_rule(m: &InfiniteActivityModel, opts: &DomOptions) -> Result<Vec<(f64, f64)>, InfiniteError> {
    let z_max = opts
        .z_max
        .or_else(|| m.compact_support())
        .unwrap_or(8.0);
    if !(z_max > opts.z_cutoff && opts.z_cutoff >= 0.0) {
        return Err(InfiniteError::InvalidInput(format!(
            "z range [{}, {z_max}] is empty",
            opts.z_cutoff
        )));
    }
    if opts.z_cutoff == 0.0 && m.compact_support().is_none() {
        return Err(InfiniteError::InvalidInput(
            "z_cutoff = 0 needs a compactly supported intensity".into(),
        ));
    }
    let mut breaks = Vec::new();
    if opts.z_cutoff == 0.0 {
        breaks.extend((0..=4).map(|k| z_max * k as f64 / 4.0));
    } else {
        let mut b = opts.z_cutoff;
        while b < z_max {
            breaks.push(b);
            b *= 2.0;
        }
        breaks.push(z_max);
    }
    if 1.0 > breaks[0] && 1.0 < z_max && !breaks.contains(&1.0) {
        breaks.push(1.0);
    }
    breaks.sort_by(f64::total_cmp);
    let gl = GaussLegendre::new(opts.z_nodes_per_panel);
    let mut rule = Vec::new();
    for w in breaks.windows(2) {
        for (z, wt) in gl.on_interval(w[0], w[1]) {
            rule.push((z, wt));
            rule.push((-z, wt));
        }
    }
    Ok(rule)
}

struct DomContext<'a> {
    m: &'a InfiniteActivityModel,
    z_rule: Vec<(f64, f64)>,
    theta_rule: Vec<(f64, f64)>,
}

impl DomContext<'_> {
    /// `∫_{|z|<1} F(x,z) ν(x,z) dz` and its x-derivative.
    fn compensator(&self, x: f64) -> (f64, f64) {
        let m = self.m;
        let mut c = 0.0;
        let mut dc = 0.0;
        for &(z, w) in &self.z_rule {
            if z.abs() < 1.0 {
                let nu = m.nu(x, z);
                let f = m.jump_map(x, z);
                c += w * f * nu;
                dc += w * (m.jump_map_dx(x, z) * nu + f * m.nu_dx(x, z));
            }
        }
        (c, dc)
    }

    /// The nonlocal integral at `x` given the previous state `y`, and the
    /// weight of excluded nodes.
    fn nonlocal(&self, x: f64, y: f64, index: usize) -> Result<(f64, f64), InfiniteError> {
        let m = self.m;
        let u = x - y;
        let den = nu_f(m, y, u)?.value;
        let mut total = 0.0;
        let mut excluded = 0.0;
        for &(th, wt) in &self.theta_rule {
            for &(z, wz) in &self.z_rule {
                let tm = TransportMap::new(m, th, z);
                let pre = tm.inverse(x)?;
                let nu = m.nu(pre, z);
                let f = m.jump_map(pre, z);
                if nu == 0.0 || f == 0.0 {
                    continue;
                }
                let arg = pre - y;
                if arg.abs() <= 1e-14 * (1.0 + y.abs()) {
                    excluded += wt * wz;
                    continue;
                }
                let num = nu_f(m, y, arg)?.value;
                if num == 0.0 {
                    continue;
                }
                if den == 0.0 {
                    return Err(InfiniteError::ZeroKernel {
                        index,
                        prev: index - 1,
                        increment: u,
                    });
                }
                total += wt * wz * f * tm.jacobian_at_preimage(pre) * num / den * nu;
            }
        }
        Ok((total, excluded))
    }
}

/// Discrete OM functional of a scalar path on a uniform grid:
/// `Σ Δt |Δx/Δt - b(x_i) + C(x_i) - N(x_i; x_{i-1})|² / (2σ²)
///  + ½ Σ Δt d/dx[b - C + N(·; x_{i-1})](x_i)`,
/// `C` the small-jump compensator and `N` the nonlocal ratio integral.
pub fn discrete_om_action(
    m: &InfiniteActivityModel,
    path: &DiscretePath,
    opts: &DomOptions,
) -> Result<DomEvaluation, InfiniteError> {
    if path.dim() != 1 {
        return Err(InfiniteError::InvalidInput("discrete OM action needs a scalar path".into()));
    }
    let n = path.n_steps();
    let dt = (path.t[n] - path.t[0]) / n as f64;
    for w in path.t.windows(2) {
        if ((w[1] - w[0]) - dt).abs() > 1e-9 * dt.max(1.0) {
            return Err(InfiniteError::InvalidInput("time grid is not uniform".into()));
        }
    }
    for i in 1..=n {
        if path.x[i] == path.x[i - 1] {
            return Err(InfiniteError::StalledPath {
                index: i,
                prev: i - 1,
                value: path.x[i],
            });
        }
    }
    let ctx = DomContext {
        m,
        z_rule: z_rule(m, opts)?,
        theta_rule: GaussLegendre::new(opts.theta_nodes).on_interval(0.0, 1.0),
    };
    let fine = if opts.resolution_check {
        let fine_opts = DomOptions {
            theta_nodes: 2 * opts.theta_nodes,
            z_nodes_per_panel: 2 * opts.z_nodes_per_panel,
            ..opts.clone()
        };
        Some(DomContext {
            m,
            z_rule: z_rule(m, &fine_opts)?,
            theta_rule: GaussLegendre::new(fine_opts.theta_nodes).on_interval(0.0, 1.0),
        })
    } else {
        None
    };
    let s2 = m.sigma() * m.sigma();
    let h = opts.fd_step;
    let steps: Vec<Result<(DomStep, f64, f64), InfiniteError>> = (1..=n)
        .into_par_iter()
        .map(|i| {
            let (x, y) = (path.x[i], path.x[i - 1]);
            let (c, dc) = ctx.compensator(x);
            let (nl, excl) = ctx.nonlocal(x, y, i)?;
            let (nl_p, _) = ctx.nonlocal(x + h, y, i)?;
            let (nl_m, _) = ctx.nonlocal(x - h, y, i)?;
            let dnl = (nl_p - nl_m) / (2.0 * h);
            let r = (x - y) / dt - m.drift(x) + c - nl;
            let kinetic = dt * r * r / (2.0 * s2);
            let divergence = 0.5 * dt * (m.drift_prime(x) - dc + dnl);
            let spread = match &fine {
                Some(f) => {
                    let (nf, _) = f.nonlocal(x, y, i)?;
                    (nf - nl).abs() / nf.abs().max(nl.abs()).max(1e-300)
                }
                None => 0.0,
            };
            Ok((
                DomStep {
                    t: path.t[i],
                    residual: r,
                    kinetic,
                    divergence,
                    nonlocal: nl,
                },
                excl,
                spread,
            ))
        })
        .collect();
    let mut out = Vec::with_capacity(n);
    let mut excluded = 0.0;
    let mut spread = 0.0f64;
    for s in steps {
        let (st, e, sp) = s?;
        excluded += e;
        spread = spread.max(sp);
        out.push(st);
    }
    let mut warnings = Vec::new();
    if spread > 1e-3 {
        warnings.push(format!(
            "nonlocal integral changes by {:.1}% under doubled quadrature; for intensities with \
             nu_F(y, u) ~ |u|^(-1-alpha) the ratio integrand is not integrable across theta*z = x_i - x_(i-1)",
            100.0 * spread
        ));
    }
    if excluded > 0.0 {
        warnings.push(format!("excluded quadrature nodes with total weight {excluded:.3e}"));
    }
    let kinetic: f64 = out.iter().map(|s| s.kinetic).sum();
    let divergence: f64 = out.iter().map(|s| s.divergence).sum();
    Ok(DomEvaluation {
        total: kinetic + divergence,
        kinetic,
        divergence,
        steps: out,
        omitted_mass_bound: omitted_mass_bound(m, opts.z_cutoff),
        excluded_measure: excluded,
        z_nodes: ctx.z_rule.len(),
        theta_nodes: opts.theta_nodes,
        nonlocal_spread: opts.resolution_check.then_some(spread),
        warnings,
    })
}

/// `∫_{|z| < cutoff} z² g(z) dz` for the dominating density `g`.
pub fn omitted_mass_bound(m: &InfiniteActivityModel, cutoff: f64) -> f64 {
    if cutoff <= 0.0 {
        return 0.0;
    }
    let f = |z: f64| z * z * m.dominating(z);
    adaptive_integrate(f, 0.0, cutoff, 1e-18, 50) + adaptive_integrate(f, -cutoff, 0.0, 1e-18, 50)
}

#[cfg(test)]
mod tests {
    use super::*;

    const NU: &str = "0.25*exp(-z^2)/(abs(z)*sqrt(abs(z)))";

    fn model(f: &str) -> InfiniteActivityModel {
        InfiniteActivityModel::from_strings("-x", 1.0, f, NU, NU, 0.5).unwrap()
    }

    #[test]
    fn theta_zero_is_identity() {
        let m = model("z*(1+0.5*tanh(x))");
        let tm = TransportMap::new(&m, 0.0, 0.4);
        assert_eq!(tm.inverse(1.7).unwrap(), 1.7);
    }

    #[test]
    fn affine_map_inverts_exactly() {
        let m = model("z");
        let tm = TransportMap::new(&m, 0.6, 0.3);
        assert_eq!(tm.inverse(1.0).unwrap(), 1.0 - 0.6 * 0.3);
        assert_eq!(tm.jacobian(1.0).unwrap(), 1.0);
    }

    #[test]
    fn nonlinear_round_trip() {
        let m = model("z*(1+0.5*tanh(x))");
        let tm = TransportMap::new(&m, 0.7, 0.3);
        let y = tm.inverse(1.2).unwrap();
        assert!((tm.forward(y) - 1.2).abs() < 1e-10);
        for x in [-3.0, -0.5, 0.0, 0.9, 4.0] {
            for z in [-0.9, -0.1, 0.05, 0.6] {
                let tm = TransportMap::new(&m, 0.9, z);
                assert!((tm.forward(tm.inverse(x).unwrap()) - x).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn bisection_fallback_when_newton_stalls() {
        let m = model("z*(1+0.5*tanh(x))");
        let mut tm = TransportMap::new(&m, 1.0, 0.9);
        tm.newton.max_iter = 0;
        let y = tm.inverse(0.3).unwrap();
        assert!((tm.forward(y) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn non_invertible_map_is_reported() {
        // x - 2 tanh(x) is not monotone and -2 tanh(x)·z ... has no preimage bracket
        let m = model("z*exp(x^2)");
        let tm = TransportMap::new(&m, 1.0, -1.0);
        assert!(matches!(tm.inverse(5.0), Err(InfiniteError::Transport { .. })));
    }

    #[test]
    fn identity_and_scaled_jump_maps() {
        let m = model("z");
        for u in [-1.3, -0.2, 0.05, 0.7] {
            let v = nu_f(&m, 0.4, u).unwrap().value;
            assert!((v - m.nu(0.4, u)).abs() < 1e-12 * v);
        }
        let m2 = model("2*z");
        for u in [-1.3, 0.05, 0.7] {
            let v = nu_f(&m2, 0.4, u).unwrap().value;
            assert!((v - m2.nu(0.4, u / 2.0) / 2.0).abs() < 1e-12 * v);
        }
    }

    #[test]
    fn out_of_range_gives_zero() {
        let m = model("tanh(z)");
        let r = nu_f(&m, 0.0, 1.5).unwrap();
        assert!(r.out_of_range);
        assert_eq!(r.value, 0.0);
    }

    #[test]
    fn omitted_mass_of_stable_like_density() {
        // ∫_{|z|<c} z² · 0.25 |z|^{-3/2} e^{-z²} ≈ 0.25 · 2 · c^{3/2} / 1.5
        let m = model("z");
        let c: f64 = 1e-3;
        let approx = 0.5 * f64::powf(c, 1.5) / 1.5;
        let got = omitted_mass_bound(&m, c);
        assert!((got / approx - 1.0).abs() < 1e-5, "{got} vs {approx}");
    }

    #[test]
    fn stalled_path_is_rejected() {
        let m = model("z");
        let p = DiscretePath::uniform(1, 1.0, vec![0.0, 0.1, 0.1, 0.3]).unwrap();
        assert!(matches!(
            discrete_om_action(&m, &p, &DomOptions::default()),
            Err(InfiniteError::StalledPath { index: 2, .. })
        ));
    }
}
