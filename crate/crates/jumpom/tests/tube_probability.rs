use jumpom::models::{FiniteActivityModel, JumpSizeDensity};
use jumpom::om::{OmOptions, SmoothPath};
use jumpom::tube::{brownian_tube_probability, estimate_tube_probability, om_ratio_experiment, Monitor, TubeOptions};

fn model(drift: &str, sigma: f64, lambda: &str) -> FiniteActivityModel {
    FiniteActivityModel::from_strings(&[drift], sigma, lambda, JumpSizeDensity::bump(0.8).unwrap()).unwrap()
}

#[test]
fn brownian_tube_matches_reflection_series() {
    let m = model("0", 1.0, "0");
    let psi = SmoothPath::parse(&["0"], 1.0).unwrap();
    for delta in [0.5, 1.0] {
        let exact = brownian_tube_probability(delta, 1.0, 1.0, 10);
        let mut opts = TubeOptions::new(100_000, 200, 11);
        opts.monitor = Monitor::Bridge;
        let e = estimate_tube_probability(&m, &psi, delta, &opts).unwrap();
        println!("delta {delta}: series {exact:.5}, bridge {:.5} {:?}", e.p_hat, e.ci95);
        assert!(e.ci95.0 <= exact && exact <= e.ci95.1);

        // grid monitoring misses excursions between grid times
        let g = estimate_tube_probability(&m, &psi, delta, &TubeOptions::new(100_000, 200, 11)).unwrap();
        assert!(g.p_hat > e.p_hat);
    }
}

#[test]
fn survival_decreases_with_jump_rate() {
    let psi = SmoothPath::parse(&["0"], 0.1).unwrap();
    let mut last = f64::INFINITY;
    for rate in ["0", "5", "20"] {
        let m = model("-x", 0.5, rate);
        let e = estimate_tube_probability(&m, &psi, 0.1, &TubeOptions::new(50_000, 200, 5)).unwrap();
        println!("lambda {rate}: {:.5} {:?}", e.p_hat, e.ci95);
        assert!(e.ci95.1 < last);
        last = e.ci95.0;
    }
}

#[test]
fn nested_tubes_are_monotone() {
    let m = model("-x", 0.7, "1");
    let psi = SmoothPath::parse(&["0.5*t"], 0.2).unwrap();
    let opts = TubeOptions::new(20_000, 200, 17);
    let mut last = 1.0;
    for delta in [0.4, 0.3, 0.2, 0.15] {
        let e = estimate_tube_probability(&m, &psi, delta, &opts).unwrap();
        assert!(e.p_hat <= last);
        last = e.p_hat;
    }
}

#[test]
fn ratio_test_is_shift_invariant() {
    let m = model("0", 0.7, "1");
    let opts = TubeOptions::new(40_000, 200, 23);
    let om = OmOptions::default();
    let a1 = SmoothPath::parse(&["0"], 0.2).unwrap();
    let a2 = SmoothPath::parse(&["t"], 0.2).unwrap();
    let b1 = SmoothPath::parse(&["3"], 0.2).unwrap();
    let b2 = SmoothPath::parse(&["3+t"], 0.2).unwrap();
    let ra = &om_ratio_experiment(&m, &a1, &a2, &[0.3], &opts, &om).unwrap()[0];
    let rb = &om_ratio_experiment(&m, &b1, &b2, &[0.3], &opts, &om).unwrap()[0];
    assert!((ra.delta_s - rb.delta_s).abs() < 1e-12);
    let sd = ((ra.ln_ratio_ci.1 - ra.ln_ratio_ci.0).powi(2) + (rb.ln_ratio_ci.1 - rb.ln_ratio_ci.0).powi(2)).sqrt() / 3.92;
    assert!((ra.ln_ratio - rb.ln_ratio).abs() < 3.0 * sd, "{} vs {}", ra.ln_ratio, rb.ln_ratio);
}
