//! Gauss–Legendre rules.

use std::f64::consts::PI;

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            // Tricomi initial guess, then Newton on P_n.
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            dp = if d != 0.0 { d } else { dp };
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        GaussLegendre { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes and weights mapped to `[a, b]`.
    pub fn on_interval(&self, a: f64, b: f64) -> Vec<(f64, f64)> {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| (mid + half * x, half * w))
            .collect()
    }

    pub fn integrate(&self, a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
        self.on_interval(a, b).into_iter().map(|(x, w)| w * f(x)).sum()
    }

    /// Composite rule with `panels` equal panels on `[a, b]`.
    pub fn composite(&self, a: f64, b: f64, panels: usize) -> Vec<(f64, f64)> {
        let h = (b - a) / panels as f64;
        (0..panels)
            .flat_map(|k| self.on_interval(a + k as f64 * h, a + (k + 1) as f64 * h))
            .collect()
    }
}

/// Adaptive bisection with a 10-node Gauss–Legendre rule: a panel is
/// accepted when it agrees with the sum over its halves to `abs_tol`
/// (scaled by the panel's share of `[a, b]`).
pub fn adaptive_integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, abs_tol: f64, max_depth: u32) -> f64 {
    let gl = GaussLegendre::new(10);
    let whole = gl.integrate(a, b, &f);
    adaptive_panel(&gl, &f, a, b, whole, abs_tol, max_depth)
}

fn adaptive_panel(
    gl: &GaussLegendre,
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let left = gl.integrate(a, m, f);
    let right = gl.integrate(m, b, f);
    if depth == 0 || (left + right - whole).abs() <= tol {
        return left + right;
    }
    adaptive_panel(gl, f, a, m, left, 0.5 * tol, depth - 1) + adaptive_panel(gl, f, m, b, right, 0.5 * tol, depth - 1)
}

/// P_n(x) and P_n'(x) by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adaptive_handles_endpoint_singularity() {
        // ∫₀¹ z^{-1/2} dz = 2
        let v = adaptive_integrate(|z| 1.0 / z.sqrt(), 0.0, 1.0, 1e-12, 60);
        assert!((v - 2.0).abs() < 1e-9, "{v}");
        let g = adaptive_integrate(|z| (-z * z).exp(), -8.0, 8.0, 1e-14, 30);
        assert!((g - std::f64::consts::PI.sqrt()).abs() < 1e-13);
    }

    #[test]
    fn integrates_polynomials_exactly() {
        for n in [1, 2, 5, 16, 64] {
            let gl = GaussLegendre::new(n);
            for k in 0..(2 * n) {
                let exact = if k % 2 == 1 { 0.0 } else { 2.0 / (k as f64 + 1.0) };
                let v = gl.integrate(-1.0, 1.0, |x| x.powi(k as i32));
                assert!((v - exact).abs() < 1e-13, "n={n} k={k}: {v} vs {exact}");
            }
        }
    }

    #[test]
    fn weights_sum_to_two_and_nodes_sorted() {
        let gl = GaussLegendre::new(64);
        let s: f64 = gl.weights.iter().sum();
        assert!((s - 2.0).abs() < 1e-14);
        assert!(gl.nodes.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn composite_integrates_smooth_function() {
        let gl = GaussLegendre::new(8);
        let v: f64 = gl
            .composite(0.0, PI, 10)
            .into_iter()
            .map(|(x, w)| w * x.sin())
            .sum();
        assert!((v - 2.0).abs() < 1e-14);
    }
}
