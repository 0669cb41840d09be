//! Forward Lévy–Fokker–Planck solver for the finite-activity model.
//!
//! `∂p/∂t = -∇·(b p) + σ²/2 Δp + ∫ [λ(x - z) p(x - z) - λ(x) p(x)] ν_J(dz)`
//! started from the mollified point mass `N(x0, ε I)` on a box with an
//! absorbing exterior. Each step is a Strang split: half a step of implicit
//! drift-diffusion, a full explicit jump step, another half step of
//! drift-diffusion.

use std::io::{self, Read, Write};

use rayon::prelude::*;
use thiserror::Error;

use crate::grid::{cell_aligned_box, ShiftKernel, UniformGrid};
use crate::models::{FiniteActivityModel, GridSpec, ModelError};
use crate::quad::GaussLegendre;

#[derive(Debug, Error)]
pub enum FpeError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("jump step too large: λ_max·Δt = {value:.3} > {limit}; use at least {suggested_steps} time steps")]
    Cfl {
        value: f64,
        limit: f64,
        suggested_steps: usize,
    },
    #[error("mass {mass} at t = {time} fell below 1 - {tol}")]
    MassLoss { time: f64, mass: f64, tol: f64 },
    #[error("grid spacing {h} does not resolve the initial Gaussian (need <= sqrt(eps)/2 = {required})")]
    Resolution { h: f64, required: f64 },
    #[error("jump support radius {radius} exceeds a quarter of the box width {width}")]
    SupportTooWide { radius: f64, width: f64 },
    #[error("evaluation point at distance {distance} from x0 is inside the excluded band (< {min})")]
    DomainGuard { distance: f64, min: f64 },
    #[error("time {0} is not a stored slice of the density field")]
    MissingTime(f64),
    #[error("invalid solver input: {0}")]
    InvalidInput(String),
    #[error("malformed density file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FpeOptions {
    pub grid: GridSpec,
    pub t_end: f64,
    pub steps: usize,
    pub epsilon: f64,
    /// Gauss–Legendre nodes per grid cell in the jump-term kernel.
    pub nodes_per_cell: usize,
    pub tol_mass: f64,
    /// Keep every `store_every`-th time slice (the last one is always kept).
    pub store_every: usize,
    /// Upper bound on `λ_max Δt` for the explicit jump step.
    pub max_jump_cfl: f64,
}

impl FpeOptions {
    pub fn new(grid: GridSpec, t_end: f64, steps: usize, epsilon: f64) -> Self {
        FpeOptions {
            grid,
            t_end,
            steps,
            epsilon,
            nodes_per_cell: 4,
            tol_mass: 1e-4,
            store_every: 1,
            max_jump_cfl: 0.5,
        }
    }
}

/// Time-indexed density on a uniform box grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    grid: UniformGrid,
    times: Vec<f64>,
    values: Vec<Vec<f64>>,
    mass: Vec<f64>,
    epsilon: f64,
    x0: Vec<f64>,
    clipped_mass: f64,
}

impl DensityField {
    /// Builds a field from given slices (used by tests and file readers).
    pub fn from_slices(
        grid: &GridSpec,
        times: Vec<f64>,
        values: Vec<Vec<f64>>,
        epsilon: f64,
        x0: Vec<f64>,
    ) -> Result<Self, FpeError> {
        let grid = UniformGrid::new(grid)?;
        if times.is_empty() || times.len() != values.len() {
            return Err(FpeError::InvalidInput("times and slices differ in length".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(FpeError::InvalidInput("times must increase".into()));
        }
        if values.iter().any(|v| v.len() != grid.len()) {
            return Err(FpeError::InvalidInput("slice size differs from grid".into()));
        }
        let vol = grid.cell_volume();
        let mass = values.iter().map(|v| v.iter().sum::<f64>() * vol).collect();
        Ok(DensityField {
            grid,
            times,
            values,
            mass,
            epsilon,
            x0,
            clipped_mass: 0.0,
        })
    }

    pub fn grid(&self) -> &UniformGrid {
        &self.grid
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn slice(&self, k: usize) -> &[f64] {
        &self.values[k]
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn x0(&self) -> &[f64] {
        &self.x0
    }

    /// Total negative mass removed by positivity clipping.
    pub fn clipped_mass(&self) -> f64 {
        self.clipped_mass
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Index of the slice stored at time `t` (to within 1e-9 relative).
    pub fn slice_index(&self, t: f64) -> Option<usize> {
        let tol = 1e-9 * self.t_end().max(1e-300);
        self.times.iter().position(|&s| (s - t).abs() <= tol)
    }

    /// Bracketing slices and the linear weight of the upper one.
    pub fn time_bracket(&self, t: f64) -> Option<(usize, usize, f64)> {
        let last = self.times.len() - 1;
        if t < self.times[0] || t > self.times[last] {
            return None;
        }
        if last == 0 {
            return Some((0, 0, 0.0));
        }
        let k = match self
            .times
            .binary_search_by(|s| s.partial_cmp(&t).unwrap())
        {
            Ok(k) => return Some((k, k, 0.0)),
            Err(k) => k,
        };
        let (a, b) = (k - 1, k);
        let w = (t - self.times[a]) / (self.times[b] - self.times[a]);
        Some((a, b, w))
    }

    /// Density at `(t, x)` by multilinear interpolation in space and linear
    /// interpolation in time; `None` outside the time range.
    pub fn density_at(&self, t: f64, x: &[f64]) -> Option<f64> {
        let (a, b, w) = self.time_bracket(t)?;
        let pa = self.grid.interpolate(&self.values[a], x);
        if w == 0.0 {
            return Some(pa);
        }
        let pb = self.grid.interpolate(&self.values[b], x);
        Some((1.0 - w) * pa + w * pb)
    }

    /// `∫₀ᵀ ∫ λ(x) p_t(x) dx dt` by the trapezoid rule over stored slices:
    /// the expected number of jumps up to the final time.
    pub fn integrated_rate(&self, m: &FiniteActivityModel) -> f64 {
        let d = self.grid.dim();
        let lam: Vec<f64> = (0..self.grid.len())
            .map(|i| m.lambda_at(&self.grid.point(i)[..d]))
            .collect();
        let vol = self.grid.cell_volume();
        let rate: Vec<f64> = self
            .values
            .iter()
            .map(|v| v.iter().zip(&lam).map(|(p, l)| p * l).sum::<f64>() * vol)
            .collect();
        self.times
            .windows(2)
            .zip(rate.windows(2))
            .map(|(t, r)| 0.5 * (t[1] - t[0]) * (r[0] + r[1]))
            .sum()
    }

    const MAGIC: &'static [u8; 8] = b"JPOMDF01";

    /// Binary layout (little endian): magic, `u32` dim, `u32` nodes per
    /// dimension, `f64` lo/hi per dimension, `f64` epsilon, `f64` x0 per
    /// dimension, `u64` slice count, `f64` times, then row-major slices.
    pub fn write_binary<W: Write>(&self, mut w: W) -> io::Result<()> {
        let d = self.grid.dim();
        w.write_all(Self::MAGIC)?;
        w.write_all(&(d as u32).to_le_bytes())?;
        w.write_all(&(self.grid.n() as u32).to_le_bytes())?;
        for k in 0..d {
            w.write_all(&self.grid.lo()[k].to_le_bytes())?;
            w.write_all(&self.grid.hi()[k].to_le_bytes())?;
        }
        w.write_all(&self.epsilon.to_le_bytes())?;
        for k in 0..d {
            w.write_all(&self.x0.get(k).copied().unwrap_or(0.0).to_le_bytes())?;
        }
        w.write_all(&(self.times.len() as u64).to_le_bytes())?;
        for t in &self.times {
            w.write_all(&t.to_le_bytes())?;
        }
        for slice in &self.values {
            for v in slice {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self, FpeError> {
        fn f64_of<R: Read>(r: &mut R) -> io::Result<f64> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            Ok(f64::from_le_bytes(b))
        }
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != Self::MAGIC {
            return Err(FpeError::Format("bad magic".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let d = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b4)?;
        let n = u32::from_le_bytes(b4) as usize;
        if !(1..=2).contains(&d) || n < 2 {
            return Err(FpeError::Format(format!("dimension {d}, nodes {n}")));
        }
        let mut lo = Vec::new();
        let mut hi = Vec::new();
        for _ in 0..d {
            lo.push(f64_of(&mut r)?);
            hi.push(f64_of(&mut r)?);
        }
        let epsilon = f64_of(&mut r)?;
        let x0 = (0..d).map(|_| f64_of(&mut r)).collect::<io::Result<Vec<_>>>()?;
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let k = u64::from_le_bytes(b8) as usize;
        let times = (0..k).map(|_| f64_of(&mut r)).collect::<io::Result<Vec<_>>>()?;
        let len = n.pow(d as u32);
        let mut values = Vec::with_capacity(k);
        for _ in 0..k {
            values.push((0..len).map(|_| f64_of(&mut r)).collect::<io::Result<Vec<_>>>()?);
        }
        Self::from_slices(&GridSpec { lo, hi, n }, times, values, epsilon, x0)
    }

    /// CSV rows `t, x1..xd, p` for the requested slice indices.
    pub fn write_csv_slices<W: Write>(&self, mut w: W, slices: &[usize]) -> io::Result<()> {
        let d = self.grid.dim();
        write!(w, "t")?;
        for k in 1..=d {
            write!(w, ",x{k}")?;
        }
        writeln!(w, ",p")?;
        for &s in slices {
            for (i, p) in self.values[s].iter().enumerate() {
                let x = self.grid.point(i);
                write!(w, "{:e}", self.times[s])?;
                for xk in &x[..d] {
                    write!(w, ",{xk:e}")?;
                }
                writeln!(w, ",{p:e}")?;
            }
        }
        Ok(())
    }
}

/// Implicit drift-diffusion along one coordinate direction, factorized once.
struct LineSolver {
    /// For each line: (lower, modified diagonal inverse, upper') of a Thomas
    /// factorization.
    lines: Vec<ThomasFactors>,
    dir: usize,
}

struct ThomasFactors {
    lower: Vec<f64>,
    inv_diag: Vec<f64>,
    upper: Vec<f64>,
}

impl ThomasFactors {
    fn new(lower: Vec<f64>, diag: Vec<f64>, upper: Vec<f64>) -> Self {
        let n = diag.len();
        let mut inv_diag = vec![0.0; n];
        let mut up = vec![0.0; n];
        let mut prev_upper = 0.0;
        for i in 0..n {
            let denom = diag[i] - if i > 0 { lower[i] * prev_upper } else { 0.0 };
            inv_diag[i] = 1.0 / denom;
            up[i] = upper[i] * inv_diag[i];
            prev_upper = up[i];
        }
        ThomasFactors {
            lower,
            inv_diag,
            upper: up,
        }
    }

    fn solve(&self, rhs: &mut [f64]) {
        let n = rhs.len();
        let mut prev = 0.0;
        for i in 0..n {
            let v = (rhs[i] - if i > 0 { self.lower[i] * prev } else { 0.0 }) * self.inv_diag[i];
            rhs[i] = v;
            prev = v;
        }
        for i in (0..n.saturating_sub(1)).rev() {
            rhs[i] -= self.upper[i] * rhs[i + 1];
        }
    }
}

impl LineSolver {
    /// Backward-Euler matrix for `-∂_k(b_k p) + D ∂²_k p` over a step `dt`
    /// with zero ghost nodes. Faces use central differencing where the cell
    /// Péclet number `|b| h / (2D)` is at most 1 and upwinding elsewhere, so
    /// the matrix stays an M-matrix.
    fn new(m: &FiniteActivityModel, grid: &UniformGrid, dir: usize, dt: f64) -> Self {
        let d = grid.dim();
        let n = grid.n();
        let h = grid.spacing()[dir];
        let diff = 0.5 * m.sigma() * m.sigma();
        let n_lines = if d == 1 { 1 } else { n };
        let mut b = [0.0; 2];
        let lines = (0..n_lines)
            .map(|line| {
                // face f sits between nodes f - 1 and f
                let mut alpha = vec![0.0; n + 1];
                let mut beta = vec![0.0; n + 1];
                for f in 0..=n {
                    let mut x = [0.0; 2];
                    x[dir] = grid.lo()[dir] + (f as f64 - 0.5) * h;
                    if d == 2 {
                        x[1 - dir] = grid.coord(1 - dir, line);
                    }
                    m.drift_at(&x[..d], &mut b[..d]);
                    let bf = b[dir];
                    if bf.abs() * h <= 2.0 * diff {
                        alpha[f] = 0.5 * bf + diff / h;
                        beta[f] = 0.5 * bf - diff / h;
                    } else {
                        alpha[f] = bf.max(0.0) + diff / h;
                        beta[f] = bf.min(0.0) - diff / h;
                    }
                }
                let r = dt / h;
                let lower: Vec<f64> = (0..n).map(|i| -r * alpha[i]).collect();
                let diag: Vec<f64> = (0..n).map(|i| 1.0 + r * (alpha[i + 1] - beta[i])).collect();
                let upper: Vec<f64> = (0..n).map(|i| r * beta[i + 1]).collect();
                ThomasFactors::new(lower, diag, upper)
            })
            .collect();
        LineSolver { lines, dir }
    }

    fn apply(&self, grid: &UniformGrid, p: &mut [f64]) {
        let n = grid.n();
        match (grid.dim(), self.dir) {
            (1, _) => self.lines[0].solve(p),
            (_, 1) => p
                .par_chunks_mut(n)
                .zip(self.lines.par_iter())
                .for_each(|(row, f)| f.solve(row)),
            _ => {
                // columns: gather, solve, scatter
                let cols: Vec<Vec<f64>> = (0..n)
                    .into_par_iter()
                    .map(|j| {
                        let mut col: Vec<f64> = (0..n).map(|i| p[i * n + j]).collect();
                        self.lines[j].solve(&mut col);
                        col
                    })
                    .collect();
                for (j, col) in cols.iter().enumerate() {
                    for (i, v) in col.iter().enumerate() {
                        p[i * n + j] = *v;
                    }
                }
            }
        }
    }
}

/// Kernel of `∫ q̃(x - z) ν_J(z) dz` for the interpolated `q̃` on `grid`.
pub fn jump_gain_kernel(m: &FiniteActivityModel, grid: &UniformGrid, nodes_per_cell: usize) -> ShiftKernel {
    let jump = m.jump();
    let d = grid.dim();
    let rule = cell_aligned_box(grid, jump.support_radius(), nodes_per_cell);
    ShiftKernel::from_shifts(
        grid,
        rule.into_iter().map(|(z, w)| (z, w * jump.density(&z[..d]))),
    )
}

pub fn gaussian_initial(grid: &UniformGrid, x0: &[f64], epsilon: f64) -> Vec<f64> {
    let d = grid.dim();
    let norm = (2.0 * std::f64::consts::PI * epsilon).powf(-0.5 * d as f64);
    (0..grid.len())
        .map(|i| {
            let p = grid.point(i);
            let r2: f64 = (0..d).map(|k| (p[k] - x0[k]).powi(2)).sum();
            norm * (-0.5 * r2 / epsilon).exp()
        })
        .collect()
}

pub fn solve_levy_fpe(
    m: &FiniteActivityModel,
    x0: &[f64],
    opts: &FpeOptions,
) -> Result<DensityField, FpeError> {
    let grid = UniformGrid::new(&opts.grid)?;
    let d = m.dim();
    if grid.dim() != d || x0.len() != d {
        return Err(FpeError::InvalidInput(format!(
            "model dimension {d}, grid dimension {}, x0 length {}",
            grid.dim(),
            x0.len()
        )));
    }
    if !(opts.epsilon > 0.0 && opts.t_end > 0.0 && opts.steps > 0 && opts.store_every > 0) {
        return Err(FpeError::InvalidInput(
            "need epsilon > 0, T > 0, steps >= 1, store_every >= 1".into(),
        ));
    }
    if !grid.contains(x0) {
        return Err(FpeError::InvalidInput("x0 outside the grid box".into()));
    }
    let required = 0.5 * opts.epsilon.sqrt();
    let hmax = grid.spacing().iter().cloned().fold(0.0, f64::max);
    if hmax > required * (1.0 + 1e-12) {
        return Err(FpeError::Resolution { h: hmax, required });
    }
    let radius = m.jump().support_radius();
    let width = opts.grid.width();
    if !m.is_jump_free() && radius > 0.25 * width {
        return Err(FpeError::SupportTooWide { radius, width });
    }

    let dt = opts.t_end / opts.steps as f64;
    let lam: Vec<f64> = (0..grid.len())
        .map(|i| m.lambda_at(&grid.point(i)[..d]))
        .collect();
    if let Some((i, l)) = lam.iter().enumerate().find(|(_, l)| !(**l >= 0.0 && l.is_finite())) {
        return Err(FpeError::Model(ModelError::InvalidParameter(format!(
            "jump rate {l} at grid point {:?}",
            &grid.point(i)[..d]
        ))));
    }
    let lam_max = lam.iter().cloned().fold(0.0, f64::max);
    let jumps_active = !m.is_jump_free() && lam_max > 0.0;
    let kernel = jumps_active.then(|| jump_gain_kernel(m, &grid, opts.nodes_per_cell));
    let kernel_mass = kernel.as_ref().map_or(0.0, |k| k.total_weight());
    if jumps_active && lam_max * kernel_mass * dt > opts.max_jump_cfl {
        let suggested = (opts.t_end * lam_max * kernel_mass / opts.max_jump_cfl).ceil() as usize;
        return Err(FpeError::Cfl {
            value: lam_max * kernel_mass * dt,
            limit: opts.max_jump_cfl,
            suggested_steps: suggested,
        });
    }

    let half: Vec<LineSolver> = (0..d).map(|k| LineSolver::new(m, &grid, k, 0.5 * dt)).collect();
    let vol = grid.cell_volume();
    let mut p = gaussian_initial(&grid, x0, opts.epsilon);
    let mut times = vec![0.0];
    let mut values = vec![p.clone()];
    let mut mass = vec![p.iter().sum::<f64>() * vol];
    let mut clipped = 0.0;
    let mut q = vec![0.0; grid.len()];
    let mut gain = vec![0.0; grid.len()];

    let drift_diffusion = |p: &mut [f64]| {
        for s in &half {
            s.apply(&grid, p);
        }
    };

    for step in 1..=opts.steps {
        drift_diffusion(&mut p);
        if let Some(k) = &kernel {
            q.par_iter_mut()
                .zip(p.par_iter().zip(lam.par_iter()))
                .for_each(|(qi, (pi, li))| *qi = pi * li);
            k.apply(&grid, &q, &mut gain);
            p.par_iter_mut()
                .zip(gain.par_iter().zip(q.par_iter()))
                .for_each(|(pi, (g, qi))| *pi += dt * (g - kernel_mass * qi));
        }
        // reverse order keeps the split symmetric in 2D
        for s in half.iter().rev() {
            s.apply(&grid, &mut p);
        }
        let neg: f64 = p.iter().filter(|v| **v < 0.0).map(|v| -v).sum();
        if neg > 0.0 {
            clipped += neg * vol;
            p.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        if step % opts.store_every == 0 || step == opts.steps {
            let t = step as f64 * dt;
            let mt = p.iter().sum::<f64>() * vol;
            if mt < 1.0 - opts.tol_mass {
                return Err(FpeError::MassLoss {
                    time: t,
                    mass: mt,
                    tol: opts.tol_mass,
                });
            }
            times.push(if step == opts.steps { opts.t_end } else { t });
            values.push(p.clone());
            mass.push(mt);
        }
    }
    Ok(DensityField {
        grid,
        times,
        values,
        mass,
        epsilon: opts.epsilon,
        x0: x0.to_vec(),
        clipped_mass: clipped,
    })
}

/// Gain–loss jump term `∫ [λ(x-z)p(x-z) - λ(x)p(x)] ν_J(dz)` for a density
/// given as a function.
pub fn jump_term_gain_loss(
    m: &FiniteActivityModel,
    p: &dyn Fn(&[f64]) -> f64,
    x: &[f64],
    z_nodes: usize,
) -> f64 {
    let d = m.dim();
    let q = |y: &[f64]| m.lambda_at(y) * p(y);
    let qx = q(x);
    let mut y = [0.0; 2];
    m.jump()
        .quadrature(z_nodes)
        .iter()
        .map(|node| {
            for k in 0..d {
                y[k] = x[k] - node.z[k];
            }
            node.weight * (q(&y[..d]) - qx)
        })
        .sum()
}

/// The same jump term in θ-integrated divergence form,
/// `-∇·∫ z ∫₀¹ λ(x-θz) p(x-θz) dθ ν_J(dz)`, from `p` and its gradient.
pub fn jump_term_theta_form(
    m: &FiniteActivityModel,
    p: &dyn Fn(&[f64]) -> f64,
    grad_p: &dyn Fn(&[f64], &mut [f64]),
    x: &[f64],
    z_nodes: usize,
    theta_nodes: usize,
) -> f64 {
    let d = m.dim();
    let thetas = GaussLegendre::new(theta_nodes).on_interval(0.0, 1.0);
    let mut y = [0.0; 2];
    let mut gl = [0.0; 2];
    let mut gp = [0.0; 2];
    let mut total = 0.0;
    for node in m.jump().quadrature(z_nodes) {
        let mut inner = 0.0;
        for &(th, wt) in &thetas {
            for k in 0..d {
                y[k] = x[k] - th * node.z[k];
            }
            let yy = &y[..d];
            m.lambda_grad_at(yy, &mut gl[..d]);
            grad_p(yy, &mut gp[..d]);
            let (l, pv) = (m.lambda_at(yy), p(yy));
            let div: f64 = (0..d).map(|k| node.z[k] * (gl[k] * pv + l * gp[k])).sum();
            inner += wt * div;
        }
        total -= node.weight * inner;
    }
    total
}

/// Result of [`short_time_limit_check`].
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ShortTimeReport {
    pub times: Vec<f64>,
    pub max_rel_error: Vec<f64>,
    /// Point attaining the maximum error, per time.
    pub witness: Vec<Vec<f64>>,
    pub n_points: usize,
    /// Errors strictly decrease as `t` decreases.
    pub monotone: bool,
}

/// Which rate the one-jump limit is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateAnchor {
    /// `λ(x0)`, the correct limit.
    Start,
    /// `λ(x)`, a deliberately wrong variant used as a negative control.
    Target,
}

/// Relative error of `p_t(x)/t` against `λ(x0) ν_J(x - x0)` at one point.
pub fn short_time_relative_error(
    field: &DensityField,
    m: &FiniteActivityModel,
    x0: &[f64],
    t: f64,
    x: &[f64],
    anchor: RateAnchor,
) -> Result<f64, FpeError> {
    let a = m.jump().support_radius();
    let d = m.dim();
    let dist = (0..d).map(|k| (x[k] - x0[k]).powi(2)).sum::<f64>().sqrt();
    if dist < 0.2 * a {
        return Err(FpeError::DomainGuard {
            distance: dist,
            min: 0.2 * a,
        });
    }
    let k = field.slice_index(t).ok_or(FpeError::MissingTime(t))?;
    let p = field.grid().interpolate(field.slice(k), x);
    let mut u = [0.0; 2];
    for j in 0..d {
        u[j] = x[j] - x0[j];
    }
    let rate = match anchor {
        RateAnchor::Start => m.lambda_at(x0),
        RateAnchor::Target => m.lambda_at(x),
    };
    let limit = rate * m.jump().density(&u[..d]);
    Ok(((p / field.times()[k]) - limit).abs() / limit)
}

/// Maximum relative error over grid nodes in the band
/// `0.2a <= |x - x0| <= 0.9a` for each requested time.
pub fn short_time_limit_check(
    field: &DensityField,
    m: &FiniteActivityModel,
    x0: &[f64],
    times: &[f64],
    anchor: RateAnchor,
) -> Result<ShortTimeReport, FpeError> {
    let a = m.jump().support_radius();
    let d = m.dim();
    let grid = field.grid();
    let band: Vec<[f64; 2]> = (0..grid.len())
        .map(|i| grid.point(i))
        .filter(|p| {
            let r = (0..d).map(|k| (p[k] - x0[k]).powi(2)).sum::<f64>().sqrt();
            r >= 0.2 * a && r <= 0.9 * a
        })
        .collect();
    if band.is_empty() {
        return Err(FpeError::InvalidInput("no grid nodes inside the evaluation band".into()));
    }
    let mut errs = Vec::new();
    let mut witness = Vec::new();
    for &t in times {
        let mut worst = (0.0, vec![]);
        for p in &band {
            let e = short_time_relative_error(field, m, x0, t, &p[..d], anchor)?;
            if e > worst.0 || worst.1.is_empty() {
                worst = (e, p[..d].to_vec());
            }
        }
        errs.push(worst.0);
        witness.push(worst.1);
    }
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&i, &j| times[i].partial_cmp(&times[j]).unwrap());
    let monotone = order.windows(2).all(|w| errs[w[0]] < errs[w[1]]);
    Ok(ShortTimeReport {
        times: times.to_vec(),
        max_rel_error: errs,
        witness,
        n_points: band.len(),
        monotone,
    })
}
