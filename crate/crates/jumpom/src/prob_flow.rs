//! Probability-flow drift of the finite-activity model.
//!
//! The diffusion `dX̂ = b̂(X̂, t) dt + σ dB` with
//! `b̂ = b + ∫ z ∫₀¹ λ(x - θz) p_t(x - θz) / p_t(x) dθ ν_J(dz)` and
//! `X̂₀ ~ N(x0, ε)` shares its one-time marginals with the jump-diffusion
//! started from the same Gaussian, where `p_t` is the Fokker–Planck density.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use thiserror::Error;

use crate::grid::{cell_aligned_rule, ShiftKernel, UniformGrid};
use crate::levy_fpe::DensityField;
use crate::models::FiniteActivityModel;
use crate::quad::GaussLegendre;
use crate::sde_sim::{par_paths, path_rng};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("point {x:?} lies outside the density grid")]
    OutOfBox { x: Vec<f64> },
    #[error("time {t} outside the density time range [0, {t_end}]")]
    OutOfTime { t: f64, t_end: f64 },
    #[error("model and density disagree: {0}")]
    Mismatch(String),
    #[error("{resampled} of {n_paths} flow paths left the grid (limit 1%)")]
    TooManyExits { resampled: usize, n_paths: usize },
    #[error("invalid flow simulation input: {0}")]
    InvalidInput(String),
}

/// Quadrature sizes for pointwise flow-drift evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowQuadrature {
    pub theta_nodes: usize,
    pub z_nodes: usize,
}

impl Default for FlowQuadrature {
    fn default() -> Self {
        FlowQuadrature {
            theta_nodes: 16,
            z_nodes: 64,
        }
    }
}

pub struct FlowDrift<'a> {
    model: &'a FiniteActivityModel,
    density: &'a DensityField,
    floor_rel: f64,
    peaks: Vec<f64>,
    thetas: Vec<(f64, f64)>,
    z_nodes: Vec<crate::models::JumpNode>,
}

impl<'a> FlowDrift<'a> {
    pub fn new(model: &'a FiniteActivityModel, density: &'a DensityField) -> Result<Self, FlowError> {
        Self::with_options(model, density, 1e-12, FlowQuadrature::default())
    }

    pub fn with_options(
        model: &'a FiniteActivityModel,
        density: &'a DensityField,
        floor_rel: f64,
        quad: FlowQuadrature,
    ) -> Result<Self, FlowError> {
        if model.dim() != density.grid().dim() {
            return Err(FlowError::Mismatch(format!(
                "model dimension {} vs grid dimension {}",
                model.dim(),
                density.grid().dim()
            )));
        }
        if !(floor_rel > 0.0) {
            return Err(FlowError::InvalidInput(format!("density floor {floor_rel}")));
        }
        let peaks = (0..density.times().len())
            .map(|k| density.slice(k).iter().cloned().fold(0.0, f64::max))
            .collect();
        Ok(FlowDrift {
            model,
            density,
            floor_rel,
            peaks,
            thetas: GaussLegendre::new(quad.theta_nodes).on_interval(0.0, 1.0),
            z_nodes: model.jump().quadrature(quad.z_nodes),
        })
    }

    pub fn model(&self) -> &FiniteActivityModel {
        self.model
    }

    pub fn density(&self) -> &DensityField {
        self.density
    }

    pub fn floor_rel(&self) -> f64 {
        self.floor_rel
    }

    fn check(&self, x: &[f64], t: f64) -> Result<(usize, usize, f64), FlowError> {
        if !self.density.grid().contains(x) {
            return Err(FlowError::OutOfBox { x: x.to_vec() });
        }
        self.density.time_bracket(t).ok_or(FlowError::OutOfTime {
            t,
            t_end: self.density.t_end(),
        })
    }

    /// Jump correction `b̂ - b` at `(x, t)`; returns whether the density
    /// floor was active.
    pub fn correction(&self, x: &[f64], t: f64, out: &mut [f64]) -> Result<bool, FlowError> {
        let (a, b, w) = self.check(x, t)?;
        let d = self.model.dim();
        out.iter_mut().for_each(|v| *v = 0.0);
        if self.model.is_jump_free() {
            return Ok(false);
        }
        let p = |y: &[f64]| self.density.density_at(t, y).unwrap_or(0.0);
        let floor = self.floor_rel * ((1.0 - w) * self.peaks[a] + w * self.peaks[b]);
        let px = p(x);
        let denom = px.max(floor);
        let mut y = [0.0; 2];
        for node in &self.z_nodes {
            let mut inner = 0.0;
            for &(th, wt) in &self.thetas {
                for k in 0..d {
                    y[k] = x[k] - th * node.z[k];
                }
                inner += wt * self.model.lambda_at(&y[..d]) * p(&y[..d]);
            }
            for k in 0..d {
                out[k] += node.weight * node.z[k] * inner;
            }
        }
        for v in out.iter_mut() {
            *v /= denom;
        }
        Ok(px < floor)
    }

    /// `b̂(x, t)`.
    pub fn eval(&self, x: &[f64], t: f64, out: &mut [f64]) -> Result<(), FlowError> {
        self.correction(x, t, out)?;
        let mut b = [0.0; 2];
        let d = self.model.dim();
        self.model.drift_at(x, &mut b[..d]);
        for k in 0..d {
            out[k] += b[k];
        }
        Ok(())
    }

    /// Tabulates the correction at every grid node and stored time. The
    /// θ–z integral becomes one shift kernel per component: for each θ
    /// node the shift `u = θz` runs over a cell-aligned rule on
    /// `[-θa, θa]^d` with weight `ν_J(u/θ) (u/θ) / θ^d`, which resolves
    /// densities narrower than the jump support.
    pub fn tabulate(&self, nodes_per_cell: usize) -> FlowTable {
        let grid = self.density.grid().clone();
        let d = grid.dim();
        let m = self.model;
        let n_times = self.density.times().len();
        let mut values = vec![vec![0.0; grid.len() * d]; n_times];
        let mut floor_nodes = vec![0usize; n_times];
        let mut sup = 0.0f64;
        if !m.is_jump_free() {
            let a = m.jump().support_radius();
            let h = grid.spacing();
            let kernels: Vec<ShiftKernel> = (0..d)
                .map(|c| {
                    let mut shifts = Vec::new();
                    for &(th, wt) in &self.thetas {
                        let r0 = cell_aligned_rule(h[0], -th * a, th * a, nodes_per_cell);
                        let r1 = if d == 2 {
                            cell_aligned_rule(h[1], -th * a, th * a, nodes_per_cell)
                        } else {
                            vec![(0.0, 1.0)]
                        };
                        let jac = th.powi(d as i32);
                        for &(u0, w0) in &r0 {
                            for &(u1, w1) in &r1 {
                                let z = [u0 / th, u1 / th];
                                let dens = m.jump().density(&z[..d]);
                                if dens > 0.0 {
                                    shifts.push(([u0, u1], wt * w0 * w1 * dens * z[c] / jac));
                                }
                            }
                        }
                    }
                    ShiftKernel::from_shifts(&grid, shifts)
                })
                .collect();
            let lam: Vec<f64> = (0..grid.len())
                .map(|i| m.lambda_at(&grid.point(i)[..d]))
                .collect();
            let mut num = vec![0.0; grid.len()];
            for k in 0..n_times {
                let p = self.density.slice(k);
                let q: Vec<f64> = p.iter().zip(&lam).map(|(a, b)| a * b).collect();
                let floor = self.floor_rel * self.peaks[k];
                for (c, kern) in kernels.iter().enumerate() {
                    kern.apply(&grid, &q, &mut num);
                    for i in 0..grid.len() {
                        let v = num[i] / p[i].max(floor);
                        values[k][i * d + c] = v;
                        sup = sup.max(v.abs());
                    }
                }
                floor_nodes[k] = p.iter().filter(|&&v| v < floor).count();
            }
        }
        FlowTable {
            grid,
            times: self.density.times().to_vec(),
            values,
            floor_nodes,
            sup_correction: sup,
        }
    }
}

/// Flow-drift correction tabulated on the density grid.
#[derive(Debug, Clone)]
pub struct FlowTable {
    grid: UniformGrid,
    times: Vec<f64>,
    /// Per time slice, node-major with `d` components per node.
    values: Vec<Vec<f64>>,
    /// Nodes where the density floor was active, per slice.
    pub floor_nodes: Vec<usize>,
    /// Largest |correction| over all nodes and times (runtime audit).
    pub sup_correction: f64,
}

impl FlowTable {
    pub fn grid(&self) -> &UniformGrid {
        &self.grid
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Correction at node `i` of slice `k`.
    pub fn node_value(&self, k: usize, i: usize) -> &[f64] {
        let d = self.grid.dim();
        &self.values[k][i * d..(i + 1) * d]
    }

    fn bracket(&self, t: f64) -> Option<(usize, usize, f64)> {
        let last = self.times.len() - 1;
        if t < self.times[0] || t > self.times[last] {
            return None;
        }
        if last == 0 {
            return Some((0, 0, 0.0));
        }
        let step = self.times[1] - self.times[0];
        // slices are usually uniform; fall back to search when not
        let mut k = ((t - self.times[0]) / step).floor() as usize;
        k = k.min(last - 1);
        if !(self.times[k] <= t && t <= self.times[k + 1]) {
            k = match self.times.binary_search_by(|s| s.partial_cmp(&t).unwrap()) {
                Ok(k) => k.min(last - 1),
                Err(k) => k - 1,
            };
        }
        let w = (t - self.times[k]) / (self.times[k + 1] - self.times[k]);
        Some((k, k + 1, w))
    }

    /// Interpolated correction at `(x, t)`.
    pub fn correction(&self, x: &[f64], t: f64, out: &mut [f64]) -> Result<(), FlowError> {
        let d = self.grid.dim();
        if !self.grid.contains(x) {
            return Err(FlowError::OutOfBox { x: x.to_vec() });
        }
        let (a, b, w) = self.bracket(t).ok_or(FlowError::OutOfTime {
            t,
            t_end: *self.times.last().unwrap(),
        })?;
        // interpolate each component through a strided view
        for c in 0..d {
            let comp = |k: usize| -> f64 {
                interpolate_component(&self.grid, &self.values[k], d, c, x)
            };
            let va = comp(a);
            out[c] = if w == 0.0 { va } else { (1.0 - w) * va + w * comp(b) };
        }
        Ok(())
    }
}

fn interpolate_component(grid: &UniformGrid, values: &[f64], d: usize, c: usize, x: &[f64]) -> f64 {
    let n = grid.n();
    let h = grid.spacing();
    let lo = grid.lo();
    let mut base = [0usize; 2];
    let mut frac = [0.0; 2];
    for k in 0..d {
        let u = ((x[k] - lo[k]) / h[k]).clamp(0.0, (n - 1) as f64);
        let i = (u.floor() as usize).min(n - 2);
        base[k] = i;
        frac[k] = u - i as f64;
    }
    let at = |i: usize| values[i * d + c];
    match d {
        1 => at(base[0]) * (1.0 - frac[0]) + at(base[0] + 1) * frac[0],
        _ => {
            let i00 = base[0] * n + base[1];
            let (fx, fy) = (frac[0], frac[1]);
            (1.0 - fx) * ((1.0 - fy) * at(i00) + fy * at(i00 + 1))
                + fx * ((1.0 - fy) * at(i00 + n) + fy * at(i00 + n + 1))
        }
    }
}

/// How the flow SDE is initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowStart {
    /// `X̂₀ ~ N(x0, ε I)`, matching the density's mollifier.
    Mollified,
    /// `X̂₀ = x0` (negative control).
    PointMass,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowSamples {
    pub times: Vec<f64>,
    /// Per snapshot time, `n_paths × d` row-major samples.
    pub samples: Vec<Vec<f64>>,
    pub resampled: usize,
    pub n_paths: usize,
}

impl FlowSamples {
    /// Component `c` of the snapshot at index `k`.
    pub fn component(&self, k: usize, c: usize, d: usize) -> Vec<f64> {
        self.samples[k].iter().skip(c).step_by(d).copied().collect()
    }
}

/// Settings for [`simulate_flow_sde`].
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSimOptions {
    pub n_paths: usize,
    pub t_end: f64,
    pub n_steps: usize,
    /// Snapshot times; each must be a multiple of the step size.
    pub snapshots: Vec<f64>,
    pub seed: u64,
    pub start: FlowStart,
}

fn snapshot_steps(snapshots: &[f64], t_end: f64, n_steps: usize) -> Result<Vec<usize>, String> {
    let dt = t_end / n_steps as f64;
    snapshots
        .iter()
        .map(|&s| {
            let k = (s / dt).round();
            if (k * dt - s).abs() > 1e-9 * t_end.max(1.0) || k < 0.0 || k as usize > n_steps {
                Err(format!("snapshot time {s} is not on the step grid"))
            } else {
                Ok(k as usize)
            }
        })
        .collect()
}

/// Euler–Maruyama for the flow SDE using a tabulated correction. Paths
/// leaving the grid are restarted from a fresh initial draw.
pub fn simulate_flow_sde(
    table: &FlowTable,
    m: &FiniteActivityModel,
    x0: &[f64],
    epsilon: f64,
    opts: &FlowSimOptions,
) -> Result<FlowSamples, FlowError> {
    let d = m.dim();
    if x0.len() != d || table.grid().dim() != d {
        return Err(FlowError::Mismatch("dimension of x0, model and table".into()));
    }
    if opts.t_end > *table.times().last().unwrap() * (1.0 + 1e-12) {
        return Err(FlowError::OutOfTime {
            t: opts.t_end,
            t_end: *table.times().last().unwrap(),
        });
    }
    let snaps = snapshot_steps(&opts.snapshots, opts.t_end, opts.n_steps).map_err(FlowError::InvalidInput)?;
    let dt = opts.t_end / opts.n_steps as f64;
    let sq = dt.sqrt();
    let sigma = m.sigma();
    let sd0 = epsilon.sqrt();
    let results = par_paths(opts.n_paths, |k| {
        let mut rng = path_rng(opts.seed, k, 2);
        let mut restarts = 0usize;
        'attempt: loop {
            let mut x = [0.0; 2];
            for j in 0..d {
                x[j] = x0[j];
                if opts.start == FlowStart::Mollified {
                    let xi: f64 = rng.sample(StandardNormal);
                    x[j] += sd0 * xi;
                }
            }
            let mut out = vec![0.0; snaps.len() * d];
            let mut b = [0.0; 2];
            let mut c = [0.0; 2];
            for step in 0..=opts.n_steps {
                for (s, &ks) in snaps.iter().enumerate() {
                    if ks == step {
                        out[s * d..(s + 1) * d].copy_from_slice(&x[..d]);
                    }
                }
                if step == opts.n_steps {
                    break;
                }
                let t = step as f64 * dt;
                if table.correction(&x[..d], t, &mut c[..d]).is_err() {
                    restarts += 1;
                    if restarts > opts.n_paths {
                        return (out, restarts);
                    }
                    continue 'attempt;
                }
                m.drift_at(&x[..d], &mut b[..d]);
                for j in 0..d {
                    let xi: f64 = rng.sample(StandardNormal);
                    x[j] += (b[j] + c[j]) * dt + sigma * sq * xi;
                }
            }
            if !table.grid().contains(&x[..d]) {
                restarts += 1;
                continue 'attempt;
            }
            return (out, restarts);
        }
    });
    let resampled: usize = results.iter().map(|r| r.1).sum();
    if resampled * 100 > opts.n_paths {
        return Err(FlowError::TooManyExits {
            resampled,
            n_paths: opts.n_paths,
        });
    }
    let mut samples = vec![Vec::with_capacity(opts.n_paths * d); snaps.len()];
    for (out, _) in &results {
        for s in 0..snaps.len() {
            samples[s].extend_from_slice(&out[s * d..(s + 1) * d]);
        }
    }
    Ok(FlowSamples {
        times: opts.snapshots.clone(),
        samples,
        resampled,
        n_paths: opts.n_paths,
    })
}

/// Jump-diffusion marginals at the snapshot times, started from
/// `N(x0, ε I)` so the initial law matches the flow SDE.
pub fn simulate_jump_marginals(
    m: &FiniteActivityModel,
    x0: &[f64],
    epsilon: f64,
    lambda_bar: f64,
    opts: &FlowSimOptions,
) -> Result<FlowSamples, crate::sde_sim::SimError> {
    use crate::sde_sim::simulate_jump_diffusion_with_rngs;
    let d = m.dim();
    let snaps = snapshot_steps(&opts.snapshots, opts.t_end, opts.n_steps)
        .map_err(crate::sde_sim::SimError::InvalidInput)?;
    let results = par_paths(opts.n_paths, |k| {
        let mut brownian = path_rng(opts.seed, k, 0);
        let mut jumps = path_rng(opts.seed, k, 1);
        let mut start = [0.0; 2];
        for j in 0..d {
            start[j] = x0[j];
            if opts.start == FlowStart::Mollified {
                let xi: f64 = jumps.sample(StandardNormal);
                start[j] += epsilon.sqrt() * xi;
            }
        }
        let path = simulate_jump_diffusion_with_rngs(
            m,
            &start[..d],
            opts.t_end,
            opts.n_steps,
            lambda_bar,
            &mut brownian,
            &mut jumps,
        )?;
        let mut out = Vec::with_capacity(snaps.len() * d);
        for &ks in &snaps {
            out.extend_from_slice(path.state(ks));
        }
        Ok(out)
    });
    let mut samples = vec![Vec::with_capacity(opts.n_paths * d); snaps.len()];
    for r in results {
        let out = r?;
        for s in 0..snaps.len() {
            samples[s].extend_from_slice(&out[s * d..(s + 1) * d]);
        }
    }
    Ok(FlowSamples {
        times: opts.snapshots.clone(),
        samples,
        resampled: 0,
        n_paths: opts.n_paths,
    })
}

/// Score `∇ log p_t(x)` from the density field (central differences of the
/// interpolant with step `h/2`).
pub fn score_at(density: &DensityField, t: f64, x: &[f64], out: &mut [f64]) -> Option<()> {
    let g = density.grid();
    let d = g.dim();
    let p = density.density_at(t, x)?;
    let mut y = [0.0; 2];
    for k in 0..d {
        let h = 0.5 * g.spacing()[k];
        y[..d].copy_from_slice(&x[..d]);
        y[k] = x[k] + h;
        let up = density.density_at(t, &y[..d])?;
        y[k] = x[k] - h;
        let dn = density.density_at(t, &y[..d])?;
        out[k] = (up - dn) / (2.0 * h * p);
    }
    Some(())
}

/// Drift of the deterministic probability-flow ODE in the jump-free case,
/// `b - σ²/2 ∇ log p_t`.
pub fn score_flow_drift(
    m: &FiniteActivityModel,
    density: &DensityField,
    t: f64,
    x: &[f64],
    out: &mut [f64],
) -> Option<()> {
    let d = m.dim();
    let mut s = [0.0; 2];
    score_at(density, t, x, &mut s[..d])?;
    m.drift_at(x, out);
    let half_var = 0.5 * m.sigma() * m.sigma();
    for k in 0..d {
        out[k] -= half_var * s[k];
    }
    Some(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy_fpe::{solve_levy_fpe, FpeOptions};
    use crate::models::{GridSpec, JumpSizeDensity};

    fn gaussian_field(sd: f64, center: f64) -> DensityField {
        let spec = GridSpec::new_1d(-4.0, 4.0, 1601);
        let g = UniformGrid::new(&spec).unwrap();
        let v: Vec<f64> = (0..g.len())
            .map(|i| {
                let x = g.point(i)[0] - center;
                (-0.5 * x * x / (sd * sd)).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
            })
            .collect();
        DensityField::from_slices(&spec, vec![0.0, 1.0], vec![v.clone(), v], 1e-3, vec![center]).unwrap()
    }

    #[test]
    fn zero_rate_gives_base_drift() {
        let m = FiniteActivityModel::from_strings(&["-x"], 1.0, "0", JumpSizeDensity::bump(0.5).unwrap())
            .unwrap();
        let f = gaussian_field(0.5, 0.0);
        let fd = FlowDrift::new(&m, &f).unwrap();
        let mut out = [0.0];
        fd.eval(&[0.7], 0.5, &mut out).unwrap();
        assert_eq!(out[0], -0.7);
    }

    #[test]
    fn symmetric_center_has_zero_correction() {
        let m = FiniteActivityModel::from_strings(&["0"], 1.0, "2", JumpSizeDensity::bump(0.8).unwrap())
            .unwrap();
        let f = gaussian_field(0.5, 0.3);
        let fd = FlowDrift::new(&m, &f).unwrap();
        let mut out = [0.0];
        fd.correction(&[0.3], 0.0, &mut out).unwrap();
        assert!(out[0].abs() < 1e-8, "{}", out[0]);
    }

    #[test]
    fn table_agrees_with_pointwise_evaluation() {
        let m = FiniteActivityModel::from_strings(&["0"], 1.0, "1+0.3*tanh(x)", JumpSizeDensity::bump(0.8).unwrap())
            .unwrap();
        let f = gaussian_field(0.5, 0.0);
        let fd = FlowDrift::new(&m, &f).unwrap();
        let table = fd.tabulate(4);
        let g = f.grid();
        let mut a = [0.0];
        let mut b = [0.0];
        for i in (400..1200).step_by(37) {
            let x = g.point(i);
            fd.correction(&x[..1], 0.0, &mut a).unwrap();
            table.correction(&x[..1], 0.0, &mut b).unwrap();
            assert!((a[0] - b[0]).abs() < 1e-4 * (1.0 + a[0].abs()), "x={}: {} vs {}", x[0], a[0], b[0]);
        }
    }

    #[test]
    fn zero_rate_flow_is_gaussian_diffusion() {
        let m = FiniteActivityModel::from_strings(&["0"], 1.0, "0", JumpSizeDensity::bump(0.5).unwrap())
            .unwrap();
        let eps = 0.01;
        let f = solve_levy_fpe(&m, &[0.0], &FpeOptions::new(GridSpec::new_1d(-5.0, 5.0, 201), 1.0, 50, eps))
            .unwrap();
        let table = FlowDrift::new(&m, &f).unwrap().tabulate(4);
        let opts = FlowSimOptions {
            n_paths: 100_000,
            t_end: 1.0,
            n_steps: 50,
            snapshots: vec![0.5, 1.0],
            seed: 4,
            start: FlowStart::Mollified,
        };
        let s = simulate_flow_sde(&table, &m, &[0.0], eps, &opts).unwrap();
        for (k, t) in [0.5, 1.0].iter().enumerate() {
            let (mean, var) = crate::stats::mean_and_var(&s.samples[k]);
            let exact = eps + t;
            let se = exact * (2.0 / opts.n_paths as f64).sqrt();
            assert!((var - exact).abs() < 4.0 * se, "t={t}: {var} vs {exact}");
            assert!(mean.abs() < 4.0 * (exact / opts.n_paths as f64).sqrt());
        }
        let again = simulate_flow_sde(&table, &m, &[0.0], eps, &opts).unwrap();
        assert_eq!(s, again);
    }

    #[test]
    fn score_flow_matches_gaussian_transport() {
        // heat flow from N(0, eps): the score ODE moves x(0) to x(0) sqrt(v(t)/eps)
        let m = FiniteActivityModel::from_strings(&["0"], 1.0, "0", JumpSizeDensity::bump(0.5).unwrap())
            .unwrap();
        let eps = 0.04;
        let f = solve_levy_fpe(&m, &[0.0], &FpeOptions::new(GridSpec::new_1d(-6.0, 6.0, 1201), 1.0, 1000, eps))
            .unwrap();
        let mut x = 0.1;
        let n = 1000;
        let dt = 1.0 / n as f64;
        let mut v = [0.0];
        for i in 0..n {
            // midpoint rule
            let t = i as f64 * dt;
            score_flow_drift(&m, &f, t, &[x], &mut v).unwrap();
            let xm = x + 0.5 * dt * v[0];
            score_flow_drift(&m, &f, (t + 0.5 * dt).min(1.0), &[xm], &mut v).unwrap();
            x += dt * v[0];
        }
        let exact = 0.1 * ((eps + 1.0) / eps).sqrt();
        assert!((x - exact).abs() < 0.01 * exact, "{x} vs {exact}");
    }
}
