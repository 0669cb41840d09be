use jumpom::infinite::{discrete_om_action, nu_f, nu_f_tail_derivative, DomOptions, TransportMap};
use jumpom::map_solver::discretize_action;
use jumpom::models::{FiniteActivityModel, InfiniteActivityModel, JumpSizeDensity};
use jumpom::om::{om_action, JumpQuadSpec, OmOptions, SmoothPath};
use jumpom::sde_sim::DiscretePath;

const NU: &str = "0.25*exp(-z^2)/(abs(z)*sqrt(abs(z)))*(1+0.5*sin(x))/1.5";
const G: &str = "0.25*exp(-z^2)/(abs(z)*sqrt(abs(z)))";

fn sample_points() -> Vec<(f64, f64)> {
    (0..50)
        .map(|k| {
            let y = -2.0 + 4.0 * ((k * 17 % 50) as f64 + 0.5) / 50.0;
            let mag = 0.02 * 100f64.powf((k * 7 % 25) as f64 / 24.0);
            let u = if k % 2 == 0 { mag } else { -mag };
            (y, u)
        })
        .collect()
}

#[test]
fn nu_f_matches_tail_derivative() {
    for f in ["z*(1+0.5*tanh(x))", "z+0.2*z^3*(1+0.5*sin(x))"] {
        let m = InfiniteActivityModel::from_strings("-x", 1.0, f, NU, G, 0.5).unwrap();
        let mut worst = 0.0f64;
        for (y, u) in sample_points() {
            let cv = nu_f(&m, y, u).unwrap();
            assert!(!cv.out_of_range);
            let fd = nu_f_tail_derivative(&m, y, u, 1e-4).unwrap();
            worst = worst.max(((cv.value - fd) / fd).abs());
        }
        println!("{f}: worst relative error {worst:.2e}");
        assert!(worst < 1e-4);
    }
}

#[test]
fn transport_round_trip_on_validated_region() {
    let m = InfiniteActivityModel::from_strings("-x", 1.0, "z*(1+0.5*tanh(x))", NU, G, 0.5).unwrap();
    for i in 0..21 {
        let x = -3.0 + 0.3 * i as f64;
        for j in 0..11 {
            let theta = j as f64 / 10.0;
            for z in [-1.0, -0.5, -0.01, 0.02, 0.4, 1.0] {
                let tm = TransportMap::new(&m, theta, z);
                let y = tm.inverse(x).unwrap();
                assert!((tm.forward(y) - x).abs() < 1e-10);
                assert!(tm.jacobian(x).unwrap() > 0.0);
            }
        }
    }
}

fn knots(expr: &str, n: usize, t_end: f64) -> DiscretePath {
    let e = jumpom::expr::ExpressionAst::parse(expr, &["t"]).unwrap();
    let x = (0..=n).map(|i| e.eval(&[t_end * i as f64 / n as f64])).collect();
    DiscretePath::uniform(1, t_end, x).unwrap()
}

fn embedding_opts() -> DomOptions {
    DomOptions {
        z_cutoff: 0.0,
        ..DomOptions::default()
    }
}

#[test]
fn embedding_matches_continuous_action() {
    for lambda in ["1", "1+0.5*tanh(x)"] {
        let fm = FiniteActivityModel::from_strings(&["-x"], 0.7, lambda, JumpSizeDensity::bump(0.8).unwrap()).unwrap();
        let im = InfiniteActivityModel::embed_finite(&fm, 1.5).unwrap();
        let path = knots("sin(t)", 200, 1.0);
        let d = discrete_om_action(&im, &path, &embedding_opts()).unwrap();
        let c = om_action(&fm, &SmoothPath::parse(&["sin(t)"], 1.0).unwrap(), &OmOptions::default()).unwrap();
        let mid = discretize_action(&fm, &path, JumpQuadSpec::default()).unwrap();
        let rel = ((d.total - c.total) / c.total).abs();
        println!("{lambda}: dOM {} OM {} midpoint {} rel {rel:.2e}", d.total, c.total, mid);
        assert!(rel < 0.01);
        assert_eq!(d.excluded_measure, 0.0);
        assert!(d.nonlocal_spread.unwrap() < 1e-6, "{:?}", d.nonlocal_spread);
        assert!(d.warnings.is_empty());
    }
}

#[test]
fn zero_rate_embedding_is_the_gaussian_discrete_action() {
    let fm = FiniteActivityModel::from_strings(&["x-x^3"], 0.7, "0", JumpSizeDensity::bump(0.8).unwrap()).unwrap();
    let im = InfiniteActivityModel::embed_finite(&fm, 1.0).unwrap();
    let path = knots("0.3+sin(2*t)", 50, 1.0);
    let d = discrete_om_action(&im, &path, &embedding_opts()).unwrap();
    let dt = 1.0 / 50.0;
    let b = |x: f64| x - x * x * x;
    let db = |x: f64| 1.0 - 3.0 * x * x;
    let mut s = 0.0;
    for i in 1..=50 {
        let (x, y) = (path.x[i], path.x[i - 1]);
        s += ((x - y) / dt - b(x)).powi(2) * dt / (2.0 * 0.49) + 0.5 * db(x) * dt;
    }
    assert!((d.total - s).abs() < 1e-12 * s.abs(), "{} vs {s}", d.total);
}

#[test]
fn refinement_changes_by_order_dt() {
    let fm = FiniteActivityModel::from_strings(&["-x"], 0.7, "1+0.5*tanh(x)", JumpSizeDensity::bump(0.8).unwrap())
        .unwrap();
    let im = InfiniteActivityModel::embed_finite(&fm, 1.5).unwrap();
    let vals: Vec<f64> = [50, 100, 200]
        .iter()
        .map(|&n| discrete_om_action(&im, &knots("sin(t)", n, 1.0), &embedding_opts()).unwrap().total)
        .collect();
    let ratio = (vals[0] - vals[1]) / (vals[1] - vals[2]);
    println!("values {vals:?}, ratio {ratio:.3}");
    assert!((1.6..2.4).contains(&ratio));
}

#[test]
fn infinite_activity_action_reports_truncation() {
    let m = InfiniteActivityModel::from_strings("-x", 1.0, "z*(1+0.5*tanh(x))", NU, G, 0.5).unwrap();
    let path = knots("0.5*sin(t)+0.1*t", 40, 1.0);
    let opts = DomOptions {
        z_max: Some(1.0),
        ..DomOptions::default()
    };
    let d = discrete_om_action(&m, &path, &opts).unwrap();
    println!("total {} kinetic {} divergence {} omitted {:.3e}", d.total, d.kinetic, d.divergence, d.omitted_mass_bound);
    assert!(d.total.is_finite());
    assert!(d.omitted_mass_bound > 0.0 && d.omitted_mass_bound < 1e-4);
    assert!(d.kinetic >= 0.0);
    // the ratio integrand is singular across θz = x_i - x_{i-1}
    println!("spread {:?}", d.nonlocal_spread);
    assert!(d.nonlocal_spread.unwrap() > 1e-2);
    assert!(!d.warnings.is_empty());
}
