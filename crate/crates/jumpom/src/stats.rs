//! Two-sample statistics, bootstrap intervals and binomial intervals.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::sde_sim::path_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    /// Kolmogorov–Smirnov sup distance between empirical CDFs.
    Ks,
    /// 1-Wasserstein distance `∫ |F_a - F_b|`.
    W1,
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Sweeps the merged order statistics of two sorted samples. Calls
/// `f(x_prev, x, F_a, F_b)` with the CDF values on each open gap between
/// consecutive distinct points, and `f(x, x, F_a(x), F_b(x))` at each point.
fn sweep(a: &[f64], b: &[f64], mut f: impl FnMut(f64, f64, f64, f64)) {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut prev = f64::NAN;
    while i < a.len() || j < b.len() {
        let x = match (a.get(i), b.get(j)) {
            (Some(&u), Some(&v)) => u.min(v),
            (Some(&u), None) => u,
            (None, Some(&v)) => v,
            (None, None) => unreachable!(),
        };
        if !prev.is_nan() {
            f(prev, x, i as f64 / na, j as f64 / nb);
        }
        while i < a.len() && a[i] == x {
            i += 1;
        }
        while j < b.len() && b[j] == x {
            j += 1;
        }
        prev = x;
        f(x, x, i as f64 / na, j as f64 / nb);
    }
}

pub fn ks_sorted(a: &[f64], b: &[f64]) -> f64 {
    let mut d = 0.0f64;
    sweep(a, b, |_, _, fa, fb| d = d.max((fa - fb).abs()));
    d
}

pub fn w1_sorted(a: &[f64], b: &[f64]) -> f64 {
    let mut w = 0.0;
    sweep(a, b, |x0, x1, fa, fb| w += (x1 - x0) * (fa - fb).abs());
    w
}

pub fn statistic(a: &[f64], b: &[f64], metric: Metric) -> f64 {
    let (sa, sb) = (sorted(a), sorted(b));
    match metric {
        Metric::Ks => ks_sorted(&sa, &sb),
        Metric::W1 => w1_sorted(&sa, &sb),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub metric: Metric,
    pub statistic: f64,
    pub ci95: (f64, f64),
    pub n_a: usize,
    pub n_b: usize,
    pub resamples: usize,
    pub warnings: Vec<String>,
}

/// Two-sample statistic with a percentile bootstrap interval from
/// `resamples` independent resamplings of both sets.
pub fn compare_marginals(
    a: &[f64],
    b: &[f64],
    metric: Metric,
    resamples: usize,
    seed: u64,
) -> Comparison {
    let mut warnings = Vec::new();
    if a.len() != b.len() {
        warnings.push(format!("sample sizes differ ({} vs {})", a.len(), b.len()));
    }
    if a.len() < 10_000 || b.len() < 10_000 {
        warnings.push("fewer than 10^4 samples; intervals are rough".into());
    }
    let stat = statistic(a, b, metric);
    let mut boot: Vec<f64> = (0..resamples as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = path_rng(seed, r, 3);
            let ra: Vec<f64> = (0..a.len()).map(|_| a[rng.gen_range(0..a.len())]).collect();
            let rb: Vec<f64> = (0..b.len()).map(|_| b[rng.gen_range(0..b.len())]).collect();
            statistic(&ra, &rb, metric)
        })
        .collect();
    boot.sort_by(f64::total_cmp);
    let ci95 = if boot.is_empty() {
        (stat, stat)
    } else {
        (quantile_sorted(&boot, 0.025), quantile_sorted(&boot, 0.975))
    };
    Comparison {
        metric,
        statistic: stat,
        ci95,
        n_a: a.len(),
        n_b: b.len(),
        resamples,
        warnings,
    }
}

/// Linear-interpolated quantile of sorted data.
pub fn quantile_sorted(s: &[f64], q: f64) -> f64 {
    let pos = q * (s.len() - 1) as f64;
    let i = pos.floor() as usize;
    let f = pos - i as f64;
    if i + 1 < s.len() {
        s[i] * (1.0 - f) + s[i + 1] * f
    } else {
        s[i]
    }
}

/// Wilson score interval for a binomial proportion at normal quantile `z`.
pub fn wilson_interval(hits: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let p = hits as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let centre = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    let lo = if hits == 0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if hits == n { 1.0 } else { (centre + half).min(1.0) };
    (lo, hi)
}

pub fn mean_and_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn brute_ks(a: &[f64], b: &[f64]) -> f64 {
        let cdf = |s: &[f64], x: f64| s.iter().filter(|&&v| v <= x).count() as f64 / s.len() as f64;
        a.iter()
            .chain(b)
            .map(|&x| (cdf(a, x) - cdf(b, x)).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn ks_matches_brute_force_with_ties() {
        let a = [0.1, 0.5, 0.5, 0.9, 1.3];
        let b = [0.5, 0.7, 1.0, 1.3];
        assert!((statistic(&a, &b, Metric::Ks) - brute_ks(&a, &b)).abs() < 1e-15);
    }

    #[test]
    fn w1_of_shifted_samples_is_the_shift() {
        let a: Vec<f64> = (0..100).map(|i| i as f64 * 0.37 % 5.0).collect();
        let b: Vec<f64> = a.iter().map(|x| x + 0.25).collect();
        assert!((statistic(&a, &b, Metric::W1) - 0.25).abs() < 1e-12);
        // unequal sizes: W1 between point masses at 0 and {0, 1}
        assert!((statistic(&[0.0], &[0.0, 1.0], Metric::W1) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn identical_sets_have_zero_distance() {
        let a: Vec<f64> = (0..20_000).map(|i| (i as f64).sin()).collect();
        let c = compare_marginals(&a, &a, Metric::W1, 20, 1);
        assert_eq!(c.statistic, 0.0);
        assert!(c.warnings.is_empty());
    }

    #[test]
    fn null_calibration_of_ks() {
        let n = 100_000;
        let crit = 1.63 * (2.0 / n as f64).sqrt();
        let reps = 40;
        let below = (0..reps)
            .filter(|&r| {
                let mut ra = path_rng(500 + r, 0, 0);
                let mut rb = path_rng(900 + r, 0, 0);
                let a: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut ra)).collect();
                let b: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rb)).collect();
                statistic(&a, &b, Metric::Ks) < crit
            })
            .count();
        assert!(below as f64 >= 0.95 * reps as f64, "{below}/{reps}");
    }

    #[test]
    fn wilson_contains_estimate() {
        for (h, n) in [(0, 100), (3, 100), (50, 100), (100, 100)] {
            let (lo, hi) = wilson_interval(h, n, 1.96);
            let p = h as f64 / n as f64;
            assert!(lo <= p && p <= hi);
        }
        let (lo, hi) = wilson_interval(50, 100, 1.96);
        assert!((lo - 0.4038).abs() < 1e-3 && (hi - 0.5962).abs() < 1e-3);
    }
}
