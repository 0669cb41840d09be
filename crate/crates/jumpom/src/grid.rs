//! Uniform box grids, multilinear interpolation and shift kernels.
//!
//! A quadrature `Σ_k w_k q(x - s_k)` with `q` linearly interpolated between
//! grid nodes is translation invariant on a uniform grid, so at grid nodes it
//! collapses to a discrete convolution with a fixed stencil. [`ShiftKernel`]
//! builds that stencil once; applying it gives exactly the same numbers as
//! evaluating the interpolated quadrature node by node.

use crate::models::{GridSpec, ModelError};

#[derive(Debug, Clone, PartialEq)]
pub struct UniformGrid {
    dim: usize,
    n: usize,
    lo: [f64; 2],
    hi: [f64; 2],
    h: [f64; 2],
}

impl UniformGrid {
    pub fn new(spec: &GridSpec) -> Result<Self, ModelError> {
        spec.check()?;
        let dim = spec.dim();
        let mut lo = [0.0; 2];
        let mut hi = [0.0; 2];
        let mut h = [1.0; 2];
        for k in 0..dim {
            lo[k] = spec.lo[k];
            hi[k] = spec.hi[k];
            h[k] = spec.spacing(k);
        }
        Ok(UniformGrid {
            dim,
            n: spec.n,
            lo,
            hi,
            h,
        })
    }

    pub fn spec(&self) -> GridSpec {
        GridSpec {
            lo: self.lo[..self.dim].to_vec(),
            hi: self.hi[..self.dim].to_vec(),
            n: self.n,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Nodes per dimension.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self) -> &[f64] {
        &self.h[..self.dim]
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo[..self.dim]
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi[..self.dim]
    }

    /// Volume element `Π h_k`.
    pub fn cell_volume(&self) -> f64 {
        self.h[..self.dim].iter().product()
    }

    pub fn coord(&self, k: usize, i: usize) -> f64 {
        if i + 1 == self.n {
            self.hi[k]
        } else {
            self.lo[k] + i as f64 * self.h[k]
        }
    }

    /// Row-major flat index; the last coordinate varies fastest.
    pub fn flat(&self, idx: [usize; 2]) -> usize {
        match self.dim {
            1 => idx[0],
            _ => idx[0] * self.n + idx[1],
        }
    }

    pub fn unflat(&self, i: usize) -> [usize; 2] {
        match self.dim {
            1 => [i, 0],
            _ => [i / self.n, i % self.n],
        }
    }

    pub fn point(&self, i: usize) -> [f64; 2] {
        let idx = self.unflat(i);
        let mut p = [0.0; 2];
        for k in 0..self.dim {
            p[k] = self.coord(k, idx[k]);
        }
        p
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        (0..self.dim).all(|k| x[k] >= self.lo[k] && x[k] <= self.hi[k])
    }

    /// Multilinear interpolation with zero ghost nodes outside the box, so
    /// the interpolant decays linearly to 0 over one cell past the boundary.
    #[inline]
    pub fn interpolate(&self, values: &[f64], x: &[f64]) -> f64 {
        let n = self.n as i64;
        let mut base = [0i64; 2];
        let mut frac = [0.0; 2];
        for k in 0..self.dim {
            let u = (x[k] - self.lo[k]) / self.h[k];
            if !(u > -1.0 && u < n as f64) {
                return 0.0;
            }
            let i = u.floor();
            base[k] = i as i64;
            frac[k] = u - i;
        }
        let inside = |i: i64| i >= 0 && i < n;
        match self.dim {
            1 => {
                let i = base[0];
                let mut v = 0.0;
                if inside(i) {
                    v += values[i as usize] * (1.0 - frac[0]);
                }
                if inside(i + 1) && frac[0] != 0.0 {
                    v += values[(i + 1) as usize] * frac[0];
                }
                v
            }
            _ => {
                let mut v = 0.0;
                for (a, wa) in [(0, 1.0 - frac[0]), (1, frac[0])] {
                    let i = base[0] + a;
                    if !inside(i) || wa == 0.0 {
                        continue;
                    }
                    for (b, wb) in [(0, 1.0 - frac[1]), (1, frac[1])] {
                        let j = base[1] + b;
                        if inside(j) && wb != 0.0 {
                            v += wa * wb * values[(i * n + j) as usize];
                        }
                    }
                }
                v
            }
        }
    }

    /// Central-difference gradient of the interpolant at node `i`
    /// (one-sided at the boundary).
    pub fn node_gradient(&self, values: &[f64], i: usize, out: &mut [f64]) {
        let idx = self.unflat(i);
        for k in 0..self.dim {
            let step = if self.dim == 1 || k == 1 { 1 } else { self.n };
            let (lo_i, hi_i, span) = if idx[k] == 0 {
                (i, i + step, 1.0)
            } else if idx[k] + 1 == self.n {
                (i - step, i, 1.0)
            } else {
                (i - step, i + step, 2.0)
            };
            out[k] = (values[hi_i] - values[lo_i]) / (span * self.h[k]);
        }
    }
}

/// Discrete stencil `c_m` such that `Σ_m c_m q_{i - m}` equals
/// `Σ_k w_k q̃(x_i - s_k)` for the multilinear interpolant `q̃`.
#[derive(Debug, Clone)]
pub struct ShiftKernel {
    dim: usize,
    /// Offsets in units of grid steps, smallest first.
    min: [i64; 2],
    width: [usize; 2],
    coeffs: Vec<f64>,
}

impl ShiftKernel {
    pub fn from_shifts<I>(grid: &UniformGrid, shifts: I) -> Self
    where
        I: IntoIterator<Item = ([f64; 2], f64)>,
    {
        let dim = grid.dim();
        let h = grid.spacing();
        let mut entries: Vec<([i64; 2], f64)> = Vec::new();
        for (s, w) in shifts {
            if w == 0.0 {
                continue;
            }
            let mut fl = [0i64; 2];
            let mut fr = [0.0; 2];
            for k in 0..dim {
                let u = s[k] / h[k];
                let f = u.floor();
                fl[k] = f as i64;
                fr[k] = u - f;
            }
            // q̃(x_i - s) = (1 - fr) q_{i - fl} + fr q_{i - fl - 1}
            match dim {
                1 => {
                    entries.push(([fl[0], 0], w * (1.0 - fr[0])));
                    entries.push(([fl[0] + 1, 0], w * fr[0]));
                }
                _ => {
                    for (a, wa) in [(0, 1.0 - fr[0]), (1, fr[0])] {
                        for (b, wb) in [(0, 1.0 - fr[1]), (1, fr[1])] {
                            entries.push(([fl[0] + a, fl[1] + b], w * wa * wb));
                        }
                    }
                }
            }
        }
        let mut min = [0i64; 2];
        let mut max = [0i64; 2];
        if let Some((first, _)) = entries.first() {
            min = *first;
            max = *first;
        }
        for (o, _) in &entries {
            for k in 0..2 {
                min[k] = min[k].min(o[k]);
                max[k] = max[k].max(o[k]);
            }
        }
        let width = [
            (max[0] - min[0] + 1) as usize,
            if dim == 2 { (max[1] - min[1] + 1) as usize } else { 1 },
        ];
        let mut coeffs = vec![0.0; width[0] * width[1]];
        for (o, w) in entries {
            let a = (o[0] - min[0]) as usize;
            let b = (o[1] - min[1]) as usize;
            coeffs[a * width[1] + b] += w;
        }
        ShiftKernel {
            dim,
            min,
            width,
            coeffs,
        }
    }

    pub fn total_weight(&self) -> f64 {
        self.coeffs.iter().sum()
    }

    /// `out_i = Σ_m c_m q_{i - m}` with `q = 0` outside the grid.
    pub fn apply(&self, grid: &UniformGrid, q: &[f64], out: &mut [f64]) {
        use rayon::prelude::*;
        let n = grid.n() as i64;
        match self.dim {
            1 => {
                out.par_iter_mut().enumerate().for_each(|(i, o)| {
                    let i = i as i64;
                    // j = i - m ranges over [i - max, i - min]
                    let m_lo = (i - (n - 1)).max(self.min[0]);
                    let m_hi = i.min(self.min[0] + self.width[0] as i64 - 1);
                    let mut acc = 0.0;
                    let mut m = m_lo;
                    while m <= m_hi {
                        acc += self.coeffs[(m - self.min[0]) as usize] * q[(i - m) as usize];
                        m += 1;
                    }
                    *o = acc;
                });
            }
            _ => {
                let w1 = self.width[1];
                out.par_chunks_mut(grid.n()).enumerate().for_each(|(i0, row)| {
                    let i0 = i0 as i64;
                    for (i1, o) in row.iter_mut().enumerate() {
                        let i1 = i1 as i64;
                        let mut acc = 0.0;
                        for a in 0..self.width[0] {
                            let j0 = i0 - (self.min[0] + a as i64);
                            if j0 < 0 || j0 >= n {
                                continue;
                            }
                            let row_c = &self.coeffs[a * w1..(a + 1) * w1];
                            let base = (j0 * n) as usize;
                            for (b, &c) in row_c.iter().enumerate() {
                                let j1 = i1 - (self.min[1] + b as i64);
                                if c != 0.0 && j1 >= 0 && j1 < n {
                                    acc += c * q[base + j1 as usize];
                                }
                            }
                        }
                        *o = acc;
                    }
                });
            }
        }
    }
}

/// Composite Gauss–Legendre rule on `[lo, hi]` whose panels are the cells
/// `[m h, (m + 1) h]` clipped to the interval. Integrals of the multilinear
/// interpolant against a smooth weight are then resolved cell by cell even
/// when the interpolated data is narrower than the weight's support.
pub fn cell_aligned_rule(h: f64, lo: f64, hi: f64, nodes_per_cell: usize) -> Vec<(f64, f64)> {
    let gl = crate::quad::GaussLegendre::new(nodes_per_cell);
    let mut out = Vec::new();
    if !(hi > lo) {
        return out;
    }
    let m_lo = (lo / h).floor() as i64;
    let m_hi = (hi / h).ceil() as i64;
    for m in m_lo..m_hi {
        let a = (m as f64 * h).max(lo);
        let b = ((m + 1) as f64 * h).min(hi);
        if b > a {
            out.extend(gl.on_interval(a, b));
        }
    }
    out
}

/// Tensor version of [`cell_aligned_rule`] on `[-r, r]^d`.
pub fn cell_aligned_box(grid: &UniformGrid, r: f64, nodes_per_cell: usize) -> Vec<([f64; 2], f64)> {
    let h = grid.spacing();
    let r0 = cell_aligned_rule(h[0], -r, r, nodes_per_cell);
    match grid.dim() {
        1 => r0.into_iter().map(|(u, w)| ([u, 0.0], w)).collect(),
        _ => {
            let r1 = cell_aligned_rule(h[1], -r, r, nodes_per_cell);
            let mut out = Vec::with_capacity(r0.len() * r1.len());
            for &(u0, w0) in &r0 {
                for &(u1, w1) in &r1 {
                    out.push(([u0, u1], w0 * w1));
                }
            }
            out
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolation_is_exact_for_affine_functions() {
        let g = UniformGrid::new(&GridSpec {
            lo: vec![-1.0, 0.0],
            hi: vec![1.0, 2.0],
            n: 21,
        })
        .unwrap();
        let vals: Vec<f64> = (0..g.len())
            .map(|i| {
                let p = g.point(i);
                1.0 + 2.0 * p[0] - 0.5 * p[1]
            })
            .collect();
        for x in [[0.013, 1.77], [-0.99, 0.001], [0.5, 1.999]] {
            let v = g.interpolate(&vals, &x);
            assert!((v - (1.0 + 2.0 * x[0] - 0.5 * x[1])).abs() < 1e-13);
        }
        assert_eq!(g.interpolate(&vals, &[1.2, 1.0]), 0.0);
    }

    #[test]
    fn kernel_matches_direct_interpolated_sum_1d() {
        let g = UniformGrid::new(&GridSpec::new_1d(-2.0, 2.0, 81)).unwrap();
        let q: Vec<f64> = (0..g.len()).map(|i| (g.point(i)[0] * 1.3).cos() + 1.5).collect();
        let shifts = [([0.137, 0.0], 0.3), ([-0.41, 0.0], 0.5), ([0.0, 0.0], 0.2), ([1.05, 0.0], 0.1)];
        let k = ShiftKernel::from_shifts(&g, shifts);
        let mut out = vec![0.0; g.len()];
        k.apply(&g, &q, &mut out);
        for i in 0..g.len() {
            let x = g.point(i);
            let direct: f64 = shifts
                .iter()
                .map(|(s, w)| w * g.interpolate(&q, &[x[0] - s[0]]))
                .sum();
            assert!((out[i] - direct).abs() < 1e-12, "node {i}: {} vs {direct}", out[i]);
        }
    }

    #[test]
    fn kernel_matches_direct_interpolated_sum_2d() {
        let g = UniformGrid::new(&GridSpec {
            lo: vec![-1.0, -1.0],
            hi: vec![1.0, 1.0],
            n: 31,
        })
        .unwrap();
        let q: Vec<f64> = (0..g.len())
            .map(|i| {
                let p = g.point(i);
                (-(p[0] * p[0] + 2.0 * p[1] * p[1])).exp()
            })
            .collect();
        let shifts = [([0.11, -0.23], 0.4), ([-0.3, 0.05], 0.6)];
        let k = ShiftKernel::from_shifts(&g, shifts);
        let mut out = vec![0.0; g.len()];
        k.apply(&g, &q, &mut out);
        for i in (0..g.len()).step_by(7) {
            let x = g.point(i);
            let direct: f64 = shifts
                .iter()
                .map(|(s, w)| w * g.interpolate(&q, &[x[0] - s[0], x[1] - s[1]]))
                .sum();
            assert!((out[i] - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn cell_rule_resolves_narrow_interpolants() {
        // a hat of width one cell integrated against a smooth weight
        let g = UniformGrid::new(&GridSpec::new_1d(-1.0, 1.0, 201)).unwrap();
        let mut q = vec![0.0; g.len()];
        q[100] = 1.0;
        let rule = cell_aligned_box(&g, 0.5, 4);
        let k = ShiftKernel::from_shifts(&g, rule.iter().map(|&(u, w)| (u, w * (1.0 + u[0]))));
        let mut out = vec![0.0; g.len()];
        k.apply(&g, &q, &mut out);
        // out_i = ∫ (1 + u) hat(x_i - u) du = h (1 + x_i) for |x_i| < 0.5 - h
        for i in 60..140 {
            let x = g.point(i)[0];
            assert!((out[i] - 0.01 * (1.0 + x)).abs() < 1e-14, "{i}");
        }
    }
}
