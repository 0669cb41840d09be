//! Monte Carlo tube probabilities `P(sup_t |X_t - ψ_t| ≤ δ)` and the
//! log-ratio test against OM action differences.

use std::io::{self, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::FiniteActivityModel;
use crate::om::{om_action, OmError, OmOptions, Trajectory};
use crate::sde_sim::{drive_jump_diffusion, par_paths, path_rng, SimError};
use crate::stats::wilson_interval;

#[derive(Debug, Error)]
pub enum TubeError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("discretization guard: sigma*sqrt(dt) = {value:.4} exceeds delta/4 = {limit:.4}; use n_steps >= {suggested_steps}")]
    Guard {
        value: f64,
        limit: f64,
        suggested_steps: usize,
    },
    #[error("simulation failed: {0}")]
    Sim(#[from] SimError),
    #[error("action evaluation failed: {0}")]
    Om(#[from] OmError),
}

/// How the sup-norm is monitored between grid points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Monitor {
    /// Sup over the simulation grid only.
    #[default]
    Grid,
    /// Grid check plus a Brownian-bridge crossing test on each jump-free
    /// step (scalar models only).
    Bridge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TubeOptions {
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    /// Thinning bound; estimated around the tube when absent.
    pub lambda_bar: Option<f64>,
    #[serde(default)]
    pub monitor: Monitor,
}

impl TubeOptions {
    pub fn new(n_paths: usize, n_steps: usize, seed: u64) -> Self {
        TubeOptions {
            n_paths,
            n_steps,
            seed,
            lambda_bar: None,
            monitor: Monitor::Grid,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TubeEstimate {
    pub delta: f64,
    pub n_paths: usize,
    pub hits: u64,
    pub p_hat: f64,
    pub ci95: (f64, f64),
    pub dt: f64,
    pub warnings: Vec<String>,
}

/// `P(sup_{t≤T} |σ B_t| ≤ δ)` for scalar Brownian motion, from the
/// eigenfunction series truncated at `terms` terms.
pub fn brownian_tube_probability(delta: f64, sigma: f64, t: f64, terms: usize) -> f64 {
    let c = std::f64::consts::PI.powi(2) * sigma * sigma * t / (8.0 * delta * delta);
    let mut s = 0.0;
    for k in 0..terms {
        let m = (2 * k + 1) as f64;
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        s += sign / m * (-m * m * c).exp();
    }
    (4.0 / std::f64::consts::PI * s).clamp(0.0, 1.0)
}

fn path_table<P: Trajectory + ?Sized>(psi: &P, n: usize) -> Vec<f64> {
    let d = psi.dim();
    let mut out = vec![0.0; (n + 1) * d];
    let mut v = [0.0; 2];
    for i in 0..=n {
        let t = psi.t_end() * i as f64 / n as f64;
        psi.eval(t, &mut out[i * d..(i + 1) * d], &mut v[..d]);
    }
    out
}

/// Upper bound for `λ` over the tube dilated by `reach`, with a 10% margin.
fn lambda_bound(m: &FiniteActivityModel, table: &[f64], reach: f64) -> f64 {
    if m.is_jump_free() {
        return 0.0;
    }
    if let Some(c) = m.lambda_expr().as_constant() {
        return c;
    }
    let d = m.dim();
    let k = 10i32;
    let mut best = 0.0f64;
    let mut y = [0.0; 2];
    for p in table.chunks(d) {
        for a in -k..=k {
            let ra = reach * a as f64 / k as f64;
            if d == 1 {
                y[0] = p[0] + ra;
                best = best.max(m.lambda_at(&y[..1]));
            } else {
                for b in -k..=k {
                    y[0] = p[0] + ra;
                    y[1] = p[1] + reach * b as f64 / k as f64;
                    best = best.max(m.lambda_at(&y[..2]));
                }
            }
        }
    }
    1.1 * best
}

/// Hits of the tube around `table`; `path_offset` shifts the path indices
/// so two tubes can use disjoint random streams.
fn tube_hits(
    m: &FiniteActivityModel,
    table: &[f64],
    t_end: f64,
    delta: f64,
    opts: &TubeOptions,
    lambda_bar: f64,
    path_offset: u64,
) -> Result<u64, TubeError> {
    let d = m.dim();
    let n = opts.n_steps;
    let dt = t_end / n as f64;
    let s2dt = m.sigma() * m.sigma() * dt;
    let x0 = &table[..d];
    let results = par_paths(opts.n_paths, |k| {
        let path = path_offset + k;
        let mut brownian = path_rng(opts.seed, path, 0);
        let mut jumps = path_rng(opts.seed, path, 1);
        let mut killer = path_rng(opts.seed, path, 3);
        let mut prev = [0.0; 2];
        prev[..d].copy_from_slice(x0);
        let jump_step = std::cell::Cell::new(usize::MAX);
        let mut inside = true;
        let r = drive_jump_diffusion(
            m,
            x0,
            t_end,
            n,
            lambda_bar,
            &mut brownian,
            &mut jumps,
            |ev| jump_step.set(ev.step),
            |i, x| {
                let p = &table[i * d..(i + 1) * d];
                let dist2: f64 = (0..d).map(|c| (x[c] - p[c]).powi(2)).sum();
                if dist2 > delta * delta {
                    inside = false;
                    return false;
                }
                if opts.monitor == Monitor::Bridge && jump_step.get() != i - 1 {
                    let a = prev[0] - table[(i - 1) * d];
                    let b = x[0] - p[0];
                    let cross = (-2.0 * (delta - a) * (delta - b) / s2dt).exp()
                        + (-2.0 * (delta + a) * (delta + b) / s2dt).exp();
                    if killer.gen::<f64>() < cross {
                        inside = false;
                        return false;
                    }
                }
                prev[..d].copy_from_slice(x);
                true
            },
        );
        r.map(|_| inside)
    });
    let mut hits = 0;
    for r in results {
        if r? {
            hits += 1;
        }
    }
    Ok(hits)
}

fn check_tube_inputs<P: Trajectory + ?Sized>(
    m: &FiniteActivityModel,
    psi: &P,
    delta: f64,
    opts: &TubeOptions,
) -> Result<(), TubeError> {
    if psi.dim() != m.dim() {
        return Err(TubeError::InvalidInput("path and model dimensions differ".into()));
    }
    if !(delta > 0.0) {
        return Err(TubeError::InvalidInput(format!("delta = {delta}")));
    }
    if opts.n_paths == 0 || opts.n_steps == 0 {
        return Err(TubeError::InvalidInput("n_paths and n_steps must be positive".into()));
    }
    if opts.monitor == Monitor::Bridge && m.dim() != 1 {
        return Err(TubeError::InvalidInput("bridge monitoring needs a scalar model".into()));
    }
    let dt = psi.t_end() / opts.n_steps as f64;
    let value = m.sigma() * dt.sqrt();
    let limit = delta / 4.0;
    if value > limit {
        let need = psi.t_end() * (4.0 * m.sigma() / delta).powi(2);
        return Err(TubeError::Guard {
            value,
            limit,
            suggested_steps: need.ceil() as usize,
        });
    }
    Ok(())
}

fn estimate_from_table(
    m: &FiniteActivityModel,
    table: &[f64],
    t_end: f64,
    delta: f64,
    opts: &TubeOptions,
    path_offset: u64,
) -> Result<TubeEstimate, TubeError> {
    let dt = t_end / opts.n_steps as f64;
    let reach = delta + 2.0 * m.jump().support_radius() + 6.0 * m.sigma() * dt.sqrt();
    let lambda_bar = match opts.lambda_bar {
        Some(l) => l,
        None => lambda_bound(m, table, reach),
    };
    let hits = tube_hits(m, table, t_end, delta, opts, lambda_bar, path_offset)?;
    let n = opts.n_paths as u64;
    let mut warnings = Vec::new();
    if hits == 0 {
        warnings.push(format!(
            "no path stayed in the tube of radius {delta}; the interval is one-sided. Increase n_paths or delta"
        ));
    }
    Ok(TubeEstimate {
        delta,
        n_paths: opts.n_paths,
        hits,
        p_hat: hits as f64 / n as f64,
        ci95: wilson_interval(hits, n, 1.959963984540054),
        dt,
        warnings,
    })
}

/// Fraction of simulated paths started at `ψ(0)` that stay within
/// Euclidean distance `delta` of `ψ` at every grid time.
pub fn estimate_tube_probability<P: Trajectory + ?Sized>(
    m: &FiniteActivityModel,
    psi: &P,
    delta: f64,
    opts: &TubeOptions,
) -> Result<TubeEstimate, TubeError> {
    check_tube_inputs(m, psi, delta, opts)?;
    let table = path_table(psi, opts.n_steps);
    estimate_from_table(m, &table, psi.t_end(), delta, opts, 0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub delta: f64,
    pub tube1: TubeEstimate,
    pub tube2: TubeEstimate,
    /// `ln(p̂₁ / p̂₂)`; not finite when either tube has no hits.
    pub ln_ratio: f64,
    /// Delta-method 95% interval of `ln_ratio`.
    pub ln_ratio_ci: (f64, f64),
    /// `S(ψ₂) - S(ψ₁)`.
    pub delta_s: f64,
    pub gap: f64,
}

impl RatioRow {
    pub fn covers_action_gap(&self) -> bool {
        self.ln_ratio_ci.0 <= self.delta_s && self.delta_s <= self.ln_ratio_ci.1
    }
}

/// Tube probabilities around `psi1` and `psi2` for each radius, on disjoint
/// random streams, against the OM action difference.
pub fn om_ratio_experiment<P1, P2>(
    m: &FiniteActivityModel,
    psi1: &P1,
    psi2: &P2,
    deltas: &[f64],
    opts: &TubeOptions,
    om: &OmOptions,
) -> Result<Vec<RatioRow>, TubeError>
where
    P1: Trajectory + ?Sized,
    P2: Trajectory + ?Sized,
{
    let d = m.dim();
    if (psi1.t_end() - psi2.t_end()).abs() > 0.0 {
        return Err(TubeError::InvalidInput("paths have different horizons".into()));
    }
    let t1 = path_table(psi1, opts.n_steps);
    let t2 = path_table(psi2, opts.n_steps);
    if (0..d).any(|k| (t1[k] - t2[k]).abs() > 1e-12) {
        return Err(TubeError::InvalidInput("paths must share the start point".into()));
    }
    let delta_s = om_action(m, psi2, om)?.total - om_action(m, psi1, om)?.total;
    let mut rows = Vec::new();
    for &delta in deltas {
        check_tube_inputs(m, psi1, delta, opts)?;
        let e1 = estimate_from_table(m, &t1, psi1.t_end(), delta, opts, 0)?;
        let e2 = estimate_from_table(m, &t2, psi2.t_end(), delta, opts, opts.n_paths as u64)?;
        let ln_ratio = (e1.p_hat / e2.p_hat).ln();
        let var = (1.0 - e1.p_hat) / e1.hits as f64 + (1.0 - e2.p_hat) / e2.hits as f64;
        let half = 1.959963984540054 * var.sqrt();
        rows.push(RatioRow {
            delta,
            ln_ratio,
            ln_ratio_ci: (ln_ratio - half, ln_ratio + half),
            delta_s,
            gap: (ln_ratio - delta_s).abs(),
            tube1: e1,
            tube2: e2,
        });
    }
    Ok(rows)
}

pub fn write_ratio_csv<W: Write>(rows: &[RatioRow], mut w: W) -> io::Result<()> {
    writeln!(
        w,
        "delta,p1,p1_lo,p1_hi,p2,p2_lo,p2_hi,ln_ratio,ln_ratio_lo,ln_ratio_hi,delta_s,gap"
    )?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.delta,
            r.tube1.p_hat,
            r.tube1.ci95.0,
            r.tube1.ci95.1,
            r.tube2.p_hat,
            r.tube2.ci95.0,
            r.tube2.ci95.1,
            r.ln_ratio,
            r.ln_ratio_ci.0,
            r.ln_ratio_ci.1,
            r.delta_s,
            r.gap
        )?;
    }
    Ok(())
}
