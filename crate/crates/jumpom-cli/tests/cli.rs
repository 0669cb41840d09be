//! End-to-end runs of the `jumpom` binary on the configs shipped in the
//! repository.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use jumpom_cli::Manifest;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn jumpom(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_jumpom"))
        .args(args)
        .output()
        .expect("binary runs");
    let stderr = String::from_utf8_lossy(&out.stderr).into_owned();
    (out.status.code().unwrap_or(-1), stderr)
}

fn run_config(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> (i32, String) {
    let mut args = vec![
        cmd,
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    jumpom(&args)
}

fn manifest(dir: &Path) -> Manifest {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

const OU_MODEL: &str = r#"
[model]
kind = "finite"
drift = ["-x"]
sigma = 1.0
lambda = "0"
jump = { family = "bump", a = 0.8 }
"#;

#[test]
fn validate_passing_model_reports_json() {
    let tmp = tempfile::tempdir().unwrap();
    let (code, err) = run_config("validate", &configs().join("validate.toml"), tmp.path(), &[]);
    assert_eq!(code, 0, "{err}");
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("validation.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], true);
    assert_eq!(manifest(tmp.path()).exit_code, 0);
}

#[test]
fn sign_changing_rate_fails_validation_with_witness() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "bad.toml",
        r#"
seed = 3
[model]
kind = "finite"
drift = ["-x"]
sigma = 1.0
lambda = "sin(x)"
jump = { family = "bump", a = 1.0 }
[experiment.validate]
"#,
    );
    let (code, err) = run_config("validate", &cfg, &tmp.path().join("out"), &[]);
    assert_eq!(code, 2);
    assert!(err.contains("models") && err.contains("rate_positive at"), "{err}");
}

#[test]
fn malformed_configs_exit_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    let two_blocks = format!(
        "seed = 1\n{OU_MODEL}\n[experiment.validate]\n[experiment.map]\nx0 = [1.0]\nx_t = [0.0]\nt_end = 1.0\nn_knots = 10\n"
    );
    let missing_file = format!(
        "seed = 1\n[model]\nkind = \"infinite\"\ndrift = \"-x\"\nsigma = 1.0\njump_map = \"z\"\nnu = \"exp(-z^2)\"\ndominating = \"exp(-z^2)\"\nalpha = 0.5\n[experiment.dom-eval]\npath_csv = \"nowhere.csv\"\n"
    );
    let negative_seed = format!("seed = -4\n{OU_MODEL}\n[experiment.validate]\n");
    let bad_expr = "seed = 1\n[model]\nkind = \"finite\"\ndrift = [\"-x +\"]\nsigma = 1.0\nlambda = \"1\"\njump = { family = \"bump\", a = 1.0 }\n[experiment.validate]\n".to_string();
    for (i, text) in [two_blocks, missing_file, negative_seed, bad_expr].iter().enumerate() {
        let cfg = write_config(tmp.path(), &format!("c{i}.toml"), text);
        let (code, err) = run_config("validate", &cfg, &tmp.path().join("out"), &[]);
        assert_eq!(code, 2, "config {i}: {err}");
    }
    let (code, err) = run_config("map", &configs().join("om-eval.toml"), &tmp.path().join("o"), &[]);
    assert_eq!(code, 2, "{err}");
}

#[test]
fn large_seed_written_as_string() {
    let tmp = tempfile::tempdir().unwrap();
    let text = format!("seed = \"18446744073709551615\"\n{OU_MODEL}\n[experiment.validate]\n");
    let cfg = write_config(tmp.path(), "s.toml", &text);
    let (code, err) = run_config("validate", &cfg, &tmp.path().join("out"), &[]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(manifest(&tmp.path().join("out")).seed, u64::MAX);
}

#[test]
fn unconverged_map_exits_with_code_three() {
    let tmp = tempfile::tempdir().unwrap();
    let text = format!(
        "seed = 1\n{OU_MODEL}\n[numerics]\nmax_iters = 1\nstep_rule = \"plain\"\n[experiment.map]\nx0 = [1.0]\nx_t = [0.2]\nt_end = 1.0\nn_knots = 50\n"
    );
    let cfg = write_config(tmp.path(), "m.toml", &text);
    let out = tmp.path().join("out");
    let (code, err) = run_config("map", &cfg, &out, &[]);
    assert_eq!(code, 3, "{err}");
    assert!(err.contains("map_solver"), "{err}");
    assert!(out.join("map_path.csv").is_file());
    assert_eq!(manifest(&out).exit_code, 3);
}

#[test]
fn ou_map_matches_euler_lagrange_solution() {
    let tmp = tempfile::tempdir().unwrap();
    let (code, err) = run_config("map", &configs().join("map.toml"), tmp.path(), &[]);
    assert_eq!(code, 0, "{err}");
    let csv = fs::read_to_string(tmp.path().join("map_path.csv")).unwrap();
    // ψ'' = ψ with ψ(0) = 1, ψ(1) = 0.2
    let (e, ei) = (1f64.exp(), (-1f64).exp());
    let a = (0.2 - ei) / (e - ei);
    let b = 1.0 - a;
    let mut worst = 0.0f64;
    for line in csv.lines().skip(1) {
        let cols: Vec<f64> = line.split(',').map(|s| s.parse().unwrap()).collect();
        let t = cols[0];
        worst = worst.max((cols[1] - (a * t.exp() + b * (-t).exp())).abs());
    }
    assert!(worst < 1e-3, "sup error {worst}");
}

#[test]
fn tube_ratio_csv_has_gap_column_and_reruns_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("tube-ratio.toml");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(run_config("tube-ratio", &cfg, &a, &[]).0, 0);
    assert_eq!(run_config("tube-ratio", &cfg, &b, &[]).0, 0);
    let csv = fs::read(a.join("ratio.csv")).unwrap();
    assert!(String::from_utf8_lossy(&csv).lines().next().unwrap().ends_with(",gap"));
    assert_eq!(csv, fs::read(b.join("ratio.csv")).unwrap());
}

#[test]
fn seed_flag_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("simulate.toml");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(run_config("simulate", &cfg, &a, &["--seed", "99"]).0, 0);
    assert_eq!(run_config("simulate", &cfg, &b, &[]).0, 0);
    assert_eq!(manifest(&a).seed, 99);
    assert_ne!(
        fs::read(a.join("paths.csv")).unwrap(),
        fs::read(b.join("paths.csv")).unwrap()
    );
}

#[test]
fn rerun_from_manifest_reproduces_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let cfg = configs().join("dom-eval-csv.toml");
    assert_eq!(run_config("dom-eval", &cfg, &a, &["--seed", "5"]).0, 0);
    let m = a.join("manifest.json");
    assert_eq!(run_config("dom-eval", &m, &b, &[]).0, 0);
    let (ma, mb) = (manifest(&a), manifest(&b));
    assert_eq!(ma.config_sha256, mb.config_sha256);
    assert_eq!(mb.seed, 5);
    assert_eq!(ma.outputs, mb.outputs);
}
