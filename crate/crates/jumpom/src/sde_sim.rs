//! Euler–Maruyama paths for diffusions and thinned jump-diffusions.
//!
//! Every path owns two ChaCha8 streams split off one master seed: stream
//! `4k` drives the Brownian increments of path `k`, stream `4k + 1` the
//! Poisson clock, jump sizes and Brownian-bridge refinements. With a zero
//! jump rate the continuous part is therefore bit-identical to
//! [`simulate_diffusion`] under the same seed.

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::models::{FiniteActivityModel, JumpSizeDensity};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("state became non-finite at step {step} (t = {time})")]
    NonFinite { step: usize, time: f64 },
    #[error("jump rate {lambda} exceeds the thinning bound {lambda_bar} at t = {time}, x = {state:?}")]
    ThinningBound {
        time: f64,
        state: Vec<f64>,
        lambda: f64,
        lambda_bar: f64,
    },
    #[error("invalid simulation parameters: {0}")]
    InvalidInput(String),
}

/// RNG for stream `stream` of path `path` under master seed `seed`.
pub fn path_rng(seed: u64, path: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path.wrapping_mul(4).wrapping_add(stream));
    rng
}

/// Runs `f(path_index, seed)` for `n_paths` paths in parallel; results come
/// back in path order regardless of thread count.
pub fn par_paths<T, F>(n_paths: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    (0..n_paths as u64).into_par_iter().map(f).collect()
}

/// An accepted jump.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpEvent {
    pub time: f64,
    /// State immediately before the jump.
    pub pre: [f64; 2],
    pub z: [f64; 2],
    /// Index `i` of the Euler step `(t_i, t_{i+1}]` containing the jump.
    pub step: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePath {
    dim: usize,
    pub t: Vec<f64>,
    /// Row-major `(n + 1) × dim` states.
    pub x: Vec<f64>,
    pub jump_log: Vec<JumpEvent>,
}

impl DiscretePath {
    /// Path without jump log from times and row-major states.
    pub fn new(dim: usize, t: Vec<f64>, x: Vec<f64>) -> Result<Self, SimError> {
        if !(1..=2).contains(&dim) || t.len() < 2 || x.len() != t.len() * dim {
            return Err(SimError::InvalidInput(format!(
                "{} states of dimension {dim} for {} times",
                x.len(),
                t.len()
            )));
        }
        Ok(DiscretePath {
            dim,
            t,
            x,
            jump_log: Vec::new(),
        })
    }

    /// Uniform knots on `[0, t_end]`.
    pub fn uniform(dim: usize, t_end: f64, x: Vec<f64>) -> Result<Self, SimError> {
        let n = x.len() / dim.max(1);
        if n < 2 {
            return Err(SimError::InvalidInput("need at least two knots".into()));
        }
        Self::new(dim, time_grid(t_end, n - 1), x)
    }

    /// Reads the format of [`DiscretePath::write_csv`]; the jump flag
    /// column is optional and ignored.
    pub fn read_csv<R: io::BufRead>(r: R) -> Result<Self, SimError> {
        let mut lines = r.lines();
        let header = match lines.next() {
            Some(Ok(h)) => h,
            _ => return Err(SimError::InvalidInput("empty path file".into())),
        };
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.first() != Some(&"t") {
            return Err(SimError::InvalidInput(format!("unexpected header '{header}'")));
        }
        let dim = cols.iter().filter(|c| c.starts_with('x')).count();
        let mut t = Vec::new();
        let mut x = Vec::new();
        for (ln, line) in lines.enumerate() {
            let line = line.map_err(|e| SimError::InvalidInput(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split(',')
                .take(dim + 1)
                .map(|v| v.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| SimError::InvalidInput(format!("line {}: {e}", ln + 2)))?;
            if vals.len() != dim + 1 {
                return Err(SimError::InvalidInput(format!("line {}: too few columns", ln + 2)));
            }
            t.push(vals[0]);
            x.extend_from_slice(&vals[1..]);
        }
        Self::new(dim, t, x)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_steps(&self) -> usize {
        self.t.len() - 1
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    pub fn final_state(&self) -> &[f64] {
        self.state(self.n_steps())
    }

    /// CSV with columns `t, x1..xd, jump_flag`; the flag marks rows whose
    /// preceding step contained a jump.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        write!(w, "t")?;
        for k in 1..=self.dim {
            write!(w, ",x{k}")?;
        }
        writeln!(w, ",jump_flag")?;
        let mut flags = vec![0u8; self.t.len()];
        for e in &self.jump_log {
            flags[e.step + 1] = 1;
        }
        for (i, t) in self.t.iter().enumerate() {
            write!(w, "{t:e}")?;
            for v in self.state(i) {
                write!(w, ",{v:e}")?;
            }
            writeln!(w, ",{}", flags[i])?;
        }
        Ok(())
    }
}

fn check_inputs(dim: usize, t_end: f64, n: usize) -> Result<(), SimError> {
    if !(1..=2).contains(&dim) {
        return Err(SimError::InvalidInput(format!("dimension {dim}")));
    }
    if n == 0 || !(t_end > 0.0 && t_end.is_finite()) {
        return Err(SimError::InvalidInput(format!(
            "need n >= 1 and T > 0 (n = {n}, T = {t_end})"
        )));
    }
    Ok(())
}

fn time_grid(t_end: f64, n: usize) -> Vec<f64> {
    let dt = t_end / n as f64;
    (0..=n).map(|i| i as f64 * dt).collect()
}

/// Euler–Maruyama for `dX = drift(X, t) dt + σ dB` driven by `rng`.
pub fn simulate_diffusion_with_rng<F, R>(
    drift: F,
    sigma: f64,
    x0: &[f64],
    t_end: f64,
    n: usize,
    rng: &mut R,
) -> Result<DiscretePath, SimError>
where
    F: Fn(&[f64], f64, &mut [f64]),
    R: Rng + ?Sized,
{
    let d = x0.len();
    check_inputs(d, t_end, n)?;
    let t = time_grid(t_end, n);
    let dt = t_end / n as f64;
    let sq = dt.sqrt();
    let mut x = Vec::with_capacity((n + 1) * d);
    x.extend_from_slice(x0);
    let mut cur = [0.0; 2];
    cur[..d].copy_from_slice(x0);
    let mut b = [0.0; 2];
    for i in 0..n {
        drift(&cur[..d], t[i], &mut b[..d]);
        for k in 0..d {
            let xi: f64 = rng.sample(StandardNormal);
            let w = sq * xi;
            cur[k] += b[k] * dt + sigma * w;
        }
        if cur[..d].iter().any(|v| !v.is_finite()) {
            return Err(SimError::NonFinite {
                step: i + 1,
                time: t[i + 1],
            });
        }
        x.extend_from_slice(&cur[..d]);
    }
    Ok(DiscretePath {
        dim: d,
        t,
        x,
        jump_log: Vec::new(),
    })
}

/// Euler–Maruyama path of a (possibly time-dependent) diffusion seeded by
/// path 0 of `seed`.
pub fn simulate_diffusion<F>(
    drift: F,
    sigma: f64,
    x0: &[f64],
    t_end: f64,
    n: usize,
    seed: u64,
) -> Result<DiscretePath, SimError>
where
    F: Fn(&[f64], f64, &mut [f64]),
{
    simulate_diffusion_with_rng(drift, sigma, x0, t_end, n, &mut path_rng(seed, 0, 0))
}

/// Exact draw from `ν_J` by rejection from the uniform box `[-a, a]^d`.
pub fn sample_jump<R: Rng + ?Sized>(nu: &JumpSizeDensity, rng: &mut R) -> [f64; 2] {
    let a = nu.support_radius();
    let env = nu.envelope();
    let d = nu.dim();
    loop {
        let mut z = [0.0; 2];
        for zk in z.iter_mut().take(d) {
            *zk = rng.gen_range(-a..a);
        }
        let u: f64 = rng.gen();
        if u * env < nu.density(&z[..d]) {
            return z;
        }
    }
}

/// Jump-diffusion path of path index `path` under master `seed`.
pub fn simulate_jump_diffusion(
    m: &FiniteActivityModel,
    x0: &[f64],
    t_end: f64,
    n: usize,
    lambda_bar: f64,
    seed: u64,
) -> Result<DiscretePath, SimError> {
    simulate_jump_diffusion_path(m, x0, t_end, n, lambda_bar, seed, 0)
}

pub fn simulate_jump_diffusion_path(
    m: &FiniteActivityModel,
    x0: &[f64],
    t_end: f64,
    n: usize,
    lambda_bar: f64,
    seed: u64,
    path: u64,
) -> Result<DiscretePath, SimError> {
    let mut brownian = path_rng(seed, path, 0);
    let mut jumps = path_rng(seed, path, 1);
    simulate_jump_diffusion_with_rngs(m, x0, t_end, n, lambda_bar, &mut brownian, &mut jumps)
}

/// Euler–Maruyama with thinning. Each Euler step first draws its full
/// Brownian increment; proposal times falling inside the step are placed on
/// the Brownian bridge, and an accepted jump restarts the Euler
/// linearization at the post-jump state for the rest of the step.
pub fn simulate_jump_diffusion_with_rngs<R1, R2>(
    m: &FiniteActivityModel,
    x0: &[f64],
    t_end: f64,
    n: usize,
    lambda_bar: f64,
    brownian: &mut R1,
    jumps: &mut R2,
) -> Result<DiscretePath, SimError>
where
    R1: Rng + ?Sized,
    R2: Rng + ?Sized,
{
    let d = m.dim();
    let mut x = Vec::with_capacity((n + 1) * d);
    x.extend_from_slice(x0);
    let mut log = Vec::new();
    drive_jump_diffusion(
        m,
        x0,
        t_end,
        n,
        lambda_bar,
        brownian,
        jumps,
        |ev| log.push(ev),
        |_, state| {
            x.extend_from_slice(state);
            true
        },
    )?;
    Ok(DiscretePath {
        dim: d,
        t: time_grid(t_end, n),
        x,
        jump_log: log,
    })
}

/// The thinning scheme of [`simulate_jump_diffusion_with_rngs`] with
/// observers instead of a stored path. `on_step(i, x)` receives the state at
/// grid index `i >= 1` and stops the path by returning `false`. Returns
/// whether the path reached `t_end`.
#[allow(clippy::too_many_arguments)]
pub fn drive_jump_diffusion<R1, R2, J, S>(
    m: &FiniteActivityModel,
    x0: &[f64],
    t_end: f64,
    n: usize,
    lambda_bar: f64,
    brownian: &mut R1,
    jumps: &mut R2,
    mut on_jump: J,
    mut on_step: S,
) -> Result<bool, SimError>
where
    R1: Rng + ?Sized,
    R2: Rng + ?Sized,
    J: FnMut(JumpEvent),
    S: FnMut(usize, &[f64]) -> bool,
{
    let d = m.dim();
    if x0.len() != d {
        return Err(SimError::InvalidInput(format!(
            "x0 has {} components for a {d}-dimensional model",
            x0.len()
        )));
    }
    check_inputs(d, t_end, n)?;
    if !(lambda_bar >= 0.0 && lambda_bar.is_finite()) {
        return Err(SimError::InvalidInput(format!("lambda_bar = {lambda_bar}")));
    }
    let t = time_grid(t_end, n);
    let dt = t_end / n as f64;
    let sq = dt.sqrt();
    let jump_free = m.is_jump_free();
    let clock = (lambda_bar > 0.0 && !jump_free).then(|| Exp::new(lambda_bar).unwrap());
    let mut next_event = match &clock {
        Some(e) => e.sample(jumps),
        None => f64::INFINITY,
    };

    let sigma = m.sigma();
    let mut cur = [0.0; 2];
    cur[..d].copy_from_slice(x0);
    let mut b = [0.0; 2];
    let mut w_end = [0.0; 2];
    let mut w_anchor = [0.0; 2];
    let mut w_last = [0.0; 2];
    let mut x_s = [0.0; 2];

    for i in 0..n {
        let (t0, t1) = (t[i], t[i + 1]);
        for wk in w_end.iter_mut().take(d) {
            let xi: f64 = brownian.sample(StandardNormal);
            *wk = sq * xi;
        }
        if !jump_free {
            let l = m.lambda_at(&cur[..d]);
            if l > lambda_bar {
                return Err(SimError::ThinningBound {
                    time: t0,
                    state: cur[..d].to_vec(),
                    lambda: l,
                    lambda_bar,
                });
            }
        }
        // Linearization anchor: state `cur` at time `s_c`, Brownian value
        // `w_anchor` (relative to t0). Bridge samples are conditioned on the
        // latest sampled point `(s_last, w_last)` and the step end.
        let mut s_c = t0;
        let mut s_last = t0;
        w_anchor[..d].iter_mut().for_each(|v| *v = 0.0);
        w_last[..d].iter_mut().for_each(|v| *v = 0.0);
        m.drift_at(&cur[..d], &mut b[..d]);
        while next_event < t1 {
            let s = next_event;
            let frac = (s - s_last) / (t1 - s_last);
            let sd = ((s - s_last) * (t1 - s) / (t1 - s_last)).max(0.0).sqrt();
            for k in 0..d {
                let xi: f64 = jumps.sample(StandardNormal);
                w_last[k] += frac * (w_end[k] - w_last[k]) + sd * xi;
                x_s[k] = cur[k] + b[k] * (s - s_c) + sigma * (w_last[k] - w_anchor[k]);
            }
            s_last = s;
            let l = m.lambda_at(&x_s[..d]);
            if l > lambda_bar {
                return Err(SimError::ThinningBound {
                    time: s,
                    state: x_s[..d].to_vec(),
                    lambda: l,
                    lambda_bar,
                });
            }
            let u: f64 = jumps.gen();
            if u * lambda_bar < l {
                let z = sample_jump(m.jump(), jumps);
                let mut pre = [0.0; 2];
                pre[..d].copy_from_slice(&x_s[..d]);
                for k in 0..d {
                    cur[k] = x_s[k] + z[k];
                }
                s_c = s;
                w_anchor[..d].copy_from_slice(&w_last[..d]);
                m.drift_at(&cur[..d], &mut b[..d]);
                on_jump(JumpEvent {
                    time: s,
                    pre,
                    z,
                    step: i,
                });
            }
            next_event += clock.as_ref().unwrap().sample(jumps);
        }
        let h = if s_c == t0 { dt } else { t1 - s_c };
        for k in 0..d {
            cur[k] += b[k] * h + sigma * (w_end[k] - w_anchor[k]);
        }
        if cur[..d].iter().any(|v| !v.is_finite()) {
            return Err(SimError::NonFinite { step: i + 1, time: t1 });
        }
        if !on_step(i + 1, &cur[..d]) {
            return Ok(false);
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::GaussLegendre;

    fn ou(x: &[f64], _t: f64, out: &mut [f64]) {
        out[0] = -x[0];
    }

    #[test]
    fn zero_noise_zero_drift_is_constant() {
        let p = simulate_diffusion(|_, _, o: &mut [f64]| o[0] = 0.0, 0.0, &[0.3], 1.0, 50, 1).unwrap();
        assert!(p.x.iter().all(|&v| v == 0.3));
        assert_eq!(p.t.len(), 51);
        assert!(p.t.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn deterministic_ode_limit() {
        let p = simulate_diffusion(ou, 0.0, &[1.0], 1.0, 10_000, 7).unwrap();
        assert!((p.final_state()[0] - (-1.0f64).exp()).abs() < 1e-3);
    }

    #[test]
    fn ou_variance_matches_closed_form() {
        let n_paths = 100_000;
        let finals = par_paths(n_paths, |k| {
            let mut rng = path_rng(11, k, 0);
            simulate_diffusion_with_rng(ou, 1.0, &[0.0], 2.0, 1000, &mut rng)
                .unwrap()
                .final_state()[0]
        });
        let mean = finals.iter().sum::<f64>() / n_paths as f64;
        let var = finals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n_paths - 1) as f64;
        let exact = 0.5 * (1.0 - (-4.0f64).exp());
        let m4 = finals.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n_paths as f64;
        let stderr = ((m4 - var * var) / n_paths as f64).sqrt();
        assert!((var - exact).abs() < 3.0 * stderr, "{var} vs {exact} ± {stderr}");
    }

    #[test]
    fn identical_seed_identical_path() {
        let m = FiniteActivityModel::from_strings(
            &["-x"],
            0.5,
            "1+0.5*tanh(x)",
            JumpSizeDensity::bump(0.5).unwrap(),
        )
        .unwrap();
        let a = simulate_jump_diffusion_path(&m, &[0.0], 1.0, 200, 1.5, 3, 17).unwrap();
        let b = simulate_jump_diffusion_path(&m, &[0.0], 1.0, 200, 1.5, 3, 17).unwrap();
        assert_eq!(a, b);
        let c = simulate_jump_diffusion_path(&m, &[0.0], 1.0, 200, 1.5, 3, 18).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_rate_reduces_to_diffusion() {
        let m = FiniteActivityModel::from_strings(&["-x"], 0.8, "0", JumpSizeDensity::bump(0.5).unwrap())
            .unwrap();
        let jd = simulate_jump_diffusion(&m, &[0.2], 1.0, 100, 3.0, 5).unwrap();
        let diff = simulate_diffusion(ou, 0.8, &[0.2], 1.0, 100, 5).unwrap();
        assert!(jd.jump_log.is_empty());
        assert_eq!(jd.x, diff.x);
    }

    #[test]
    fn constant_rate_mean_jump_count() {
        let m = FiniteActivityModel::from_strings(&["-x"], 1.0, "2", JumpSizeDensity::bump(0.5).unwrap())
            .unwrap();
        let n_paths = 100_000;
        let counts = par_paths(n_paths, |k| {
            simulate_jump_diffusion_path(&m, &[0.0], 5.0, 50, 2.0, 21, k)
                .unwrap()
                .jump_log
                .len() as f64
        });
        let mean = counts.iter().sum::<f64>() / n_paths as f64;
        assert!((mean - 10.0).abs() < 3.0 * (10.0 / n_paths as f64).sqrt(), "{mean}");
    }

    #[test]
    fn small_rate_jump_fraction() {
        let eps = 0.05;
        let m = FiniteActivityModel::from_strings(&["0"], 1.0, "0.05", JumpSizeDensity::bump(0.5).unwrap())
            .unwrap();
        let n_paths = 100_000;
        let hits: usize = par_paths(n_paths, |k| {
            usize::from(!simulate_jump_diffusion_path(&m, &[0.0], 1.0, 10, eps, 4, k)
                .unwrap()
                .jump_log
                .is_empty())
        })
        .into_iter()
        .sum();
        let p = 1.0 - (-eps).exp();
        let frac = hits as f64 / n_paths as f64;
        let se = (p * (1.0 - p) / n_paths as f64).sqrt();
        assert!((frac - p).abs() < 3.0 * se, "{frac} vs {p}");
    }

    #[test]
    fn thinning_matches_piecewise_rate() {
        // rate 2 on x > 0 and 1 on x < 0; compare accepted events with
        // occupation time on each side
        let m = FiniteActivityModel::from_strings(
            &["0"],
            1.0,
            "1.5+0.5*sign(x)",
            JumpSizeDensity::bump(0.1).unwrap(),
        )
        .unwrap();
        let n = 2000;
        let stats = par_paths(4000, |k| {
            let p = simulate_jump_diffusion_path(&m, &[0.0], 2.0, n, 2.0, 8, k).unwrap();
            let dt = 2.0 / n as f64;
            let mut occ = [0.0; 2];
            for i in 0..n {
                let side = usize::from(p.state(i)[0] > 0.0);
                occ[side] += dt;
            }
            let mut ev = [0.0; 2];
            for e in &p.jump_log {
                ev[usize::from(e.pre[0] > 0.0)] += 1.0;
            }
            [occ[0], occ[1], ev[0], ev[1]]
        });
        let tot = stats.iter().fold([0.0; 4], |mut a, s| {
            for k in 0..4 {
                a[k] += s[k];
            }
            a
        });
        let (r_neg, r_pos) = (tot[2] / tot[0], tot[3] / tot[1]);
        assert!((r_neg - 1.0).abs() < 3.0 * (1.0 / tot[0]).sqrt() + 0.01, "{r_neg}");
        assert!((r_pos - 2.0).abs() < 3.0 * (2.0 / tot[1]).sqrt() + 0.01, "{r_pos}");
    }

    #[test]
    fn thinning_bound_violation_is_reported() {
        let m = FiniteActivityModel::from_strings(&["0"], 1.0, "3", JumpSizeDensity::bump(0.5).unwrap())
            .unwrap();
        match simulate_jump_diffusion(&m, &[0.0], 1.0, 10, 2.0, 1) {
            Err(SimError::ThinningBound { lambda, .. }) => assert_eq!(lambda, 3.0),
            other => panic!("expected thinning error, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_state_reports_step() {
        let err = simulate_diffusion(|x, _, o: &mut [f64]| o[0] = x[0] * x[0] * 1e10, 0.0, &[1.0], 1.0, 100, 0)
            .unwrap_err();
        assert!(matches!(err, SimError::NonFinite { step, .. } if step < 100));
    }

    #[test]
    fn bump_samples_stay_in_support_with_zero_mean() {
        let nu = JumpSizeDensity::bump(1.0).unwrap();
        let mut rng = path_rng(2, 0, 1);
        let n = 1_000_000;
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for _ in 0..n {
            let z = sample_jump(&nu, &mut rng)[0];
            assert!((-1.0..=1.0).contains(&z));
            sum += z;
            sum2 += z * z;
        }
        let mean = sum / n as f64;
        let se = (sum2 / n as f64 - mean * mean).sqrt() / (n as f64).sqrt();
        assert!(mean.abs() < 3.0 * se, "{mean} ± {se}");
    }

    #[test]
    fn truncated_gaussian_samples_pass_ks() {
        let nu = JumpSizeDensity::truncated_gaussian(0.5, 1.0).unwrap();
        let mut rng = path_rng(9, 0, 1);
        let n = 1_000_000;
        let mut zs: Vec<f64> = (0..n).map(|_| sample_jump(&nu, &mut rng)[0]).collect();
        zs.sort_by(f64::total_cmp);
        let gl = GaussLegendre::new(24);
        let cdf = |z: f64| gl.integrate(-1.0, z, |u| nu.density(&[u]));
        let mut d = 0.0f64;
        for (i, &z) in zs.iter().enumerate() {
            let f = cdf(z);
            d = d.max((f - i as f64 / n as f64).abs()).max(((i + 1) as f64 / n as f64 - f).abs());
        }
        assert!(d < 1.63 / (n as f64).sqrt(), "KS = {d}");
    }

    #[test]
    fn csv_has_flag_column() {
        let m = FiniteActivityModel::from_strings(&["0"], 1.0, "5", JumpSizeDensity::bump(0.5).unwrap())
            .unwrap();
        let p = simulate_jump_diffusion(&m, &[0.0], 1.0, 20, 5.0, 2).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,x1,jump_flag");
        assert_eq!(lines.len(), 22);
        let flagged = lines[1..].iter().filter(|l| l.ends_with(",1")).count();
        let steps: std::collections::BTreeSet<usize> = p.jump_log.iter().map(|e| e.step).collect();
        assert_eq!(flagged, steps.len());
    }
}
