use jumpom::expr::ExpressionAst;
use jumpom::models::{FiniteActivityModel, JumpFamily, JumpSizeDensity};
use jumpom::om::{
    classical_om_action, ell_j, ell_tilde_j, om_action, JumpQuadSpec, OmOptions, SmoothPath, Trajectory,
};
use jumpom::quad::GaussLegendre;

/// Dense trapezoid over `θ ∈ [0,1]`, `z ∈ [-a,a]` of `f(θ, z)`.
fn trapezoid_2d(a: f64, n: usize, f: impl Fn(f64, f64) -> f64) -> f64 {
    let ht = 1.0 / n as f64;
    let hz = 2.0 * a / n as f64;
    let w = |i: usize| if i == 0 || i == n { 0.5 } else { 1.0 };
    let mut s = 0.0;
    for i in 0..=n {
        let z = -a + i as f64 * hz;
        let mut inner = 0.0;
        for j in 0..=n {
            inner += w(j) * f(j as f64 * ht, z);
        }
        s += w(i) * inner;
    }
    s * ht * hz
}

fn brute_ell(m: &FiniteActivityModel, x: f64, a: f64) -> (f64, f64) {
    let nu = m.jump();
    let nu0 = nu.density(&[0.0]);
    let mut g0 = [0.0];
    nu.density_and_gradient(&[0.0], &mut g0);
    let ell = trapezoid_2d(a, 10_000, |th, z| {
        z * m.lambda_at(&[x - th * z]) * nu.density(&[-th * z]) / nu0 * nu.density(&[z])
    });
    let tilde = trapezoid_2d(a, 10_000, |th, z| {
        let mut g = [0.0];
        let v = nu.density_and_gradient(&[-th * z], &mut g);
        z * m.lambda_at(&[x - th * z]) * (g[0] * nu0 - v * g0[0]) / (nu0 * nu0) * nu.density(&[z])
    });
    (ell, tilde)
}

#[test]
fn jump_terms_match_dense_quadrature() {
    let cases = [
        ("1+x", JumpSizeDensity::bump(1.0).unwrap(), 0.3),
        ("2", JumpSizeDensity::bump(0.8).unwrap(), -0.4),
        (
            "1+0.5*tanh(x)",
            JumpSizeDensity::new(
                JumpFamily::TruncatedGaussian {
                    s: 0.4,
                    a: 0.8,
                    mean: vec![0.1],
                },
                1,
            )
            .unwrap(),
            0.7,
        ),
    ];
    for (lambda, jump, x) in cases {
        let a = jump.support_radius();
        let m = FiniteActivityModel::from_strings(&["-x"], 1.0, lambda, jump).unwrap();
        let (be, bt) = brute_ell(&m, x, a);
        let e = ell_j(&m, &[x], JumpQuadSpec::default())[0];
        let t = ell_tilde_j(&m, &[x], JumpQuadSpec::default());
        println!("{lambda}: ell {e:.10e} vs {be:.10e}; tilde {t:.10e} vs {bt:.10e}");
        if be.abs() > 1e-12 {
            assert!(((e - be) / be).abs() < 1e-6);
        } else {
            assert!(e.abs() < 1e-8);
        }
        assert!(((t - bt) / bt).abs() < 1e-6);
    }
}

/// OM action with `∇·ℓ_J` by central differences of `ℓ_J`.
fn fd_divergence_action(m: &FiniteActivityModel, psi: &SmoothPath) -> f64 {
    let q = JumpQuadSpec::default();
    let b = m.drift_exprs()[0].clone();
    let db = b.differentiate("x").unwrap();
    let h = 1e-5;
    let gl = GaussLegendre::new(4);
    let panels = 256;
    let dt = psi.t_end() / panels as f64;
    let mut s = 0.0;
    for p in 0..panels {
        for (t, w) in gl.on_interval(p as f64 * dt, (p + 1) as f64 * dt) {
            let (mut x, mut v) = ([0.0], [0.0]);
            psi.eval(t, &mut x, &mut v);
            let ell = ell_j(m, &x, q)[0];
            let div = (ell_j(m, &[x[0] + h], q)[0] - ell_j(m, &[x[0] - h], q)[0]) / (2.0 * h);
            let r = v[0] - b.eval(&x) - ell;
            let f = r * r / m.sigma().powi(2) + db.eval(&x) + div + ell_tilde_j(m, &x, q);
            s += 0.5 * w * f;
        }
    }
    s
}

#[test]
fn full_action_matches_finite_difference_divergence() {
    for lambda in ["1", "1+0.5*tanh(x)"] {
        let m = FiniteActivityModel::from_strings(&["-x"], 0.7, lambda, JumpSizeDensity::bump(0.8).unwrap()).unwrap();
        let psi = SmoothPath::parse(&["t"], 1.0).unwrap();
        let e = om_action(&m, &psi, &OmOptions::default()).unwrap();
        let fd = fd_divergence_action(&m, &psi);
        println!("{lambda}: {} vs {fd}", e.total);
        assert!(((e.total - fd) / fd).abs() < 1e-6);
        assert!(e.kinetic >= 0.0);
        assert!(e.warning.is_none());
    }
}

#[test]
fn classical_reduction_on_several_pairs() {
    let pairs = [
        ("-x", 1.0, "sin(t)", 1.0),
        ("x-x^3", 0.5, "t^2", 1.5),
        ("sin(x)", 2.0, "exp(-t)-1", 0.7),
        ("-2*x+1", 0.3, "0.5*t", 2.0),
        ("tanh(x)", 1.0, "cos(t)-1", 1.0),
    ];
    for (b, sigma, path, t_end) in pairs {
        let m = FiniteActivityModel::from_strings(&[b], sigma, "0", JumpSizeDensity::bump(0.8).unwrap()).unwrap();
        let psi = SmoothPath::parse(&[path], t_end).unwrap();
        let o = OmOptions::default();
        let a = om_action(&m, &psi, &o).unwrap();
        let c = classical_om_action(&[ExpressionAst::parse(b, &["x"]).unwrap()], sigma, &psi, &o).unwrap();
        assert!((a.total - c.total).abs() < 1e-10, "{b}: {} vs {}", a.total, c.total);
    }
}

#[test]
fn two_dimensional_action_is_finite_and_decomposes() {
    let jump = JumpSizeDensity::new(JumpFamily::Bump { a: 0.5 }, 2).unwrap();
    let m = FiniteActivityModel::from_strings(&["-x1", "-x2+x1"], 0.8, "1+0.2*x1^2", jump).unwrap();
    let psi = SmoothPath::parse(&["t", "sin(t)"], 1.0).unwrap();
    let e = om_action(&m, &psi, &OmOptions::default()).unwrap();
    assert!(e.total.is_finite());
    assert!((e.total - (e.kinetic + e.divergence + e.ell_tilde)).abs() < 1e-14);
}
