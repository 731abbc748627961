use std::path::Path;
use std::process::Command;

use nlcontrol::Error;
use nlcontrol_cli::config::{RunSpec, ZERO_TRIAL_REASON};
use nlcontrol_cli::presets;
use nlcontrol_cli::runner::RunError;
use serde_json::Value;

const SMALL_PURE: &str = r#"
problem = "pure"

[grid]
n_steps = 256

[opt]
n = 1
lambda = 0.05
max_iters = 4

[spectrum]
pixels = [64]
"#;

fn nlcontrol(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_nlcontrol"))
        .args(args)
        .output()
        .unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
    )
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn summary(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("run_summary.json")).unwrap()).unwrap()
}

fn run_config(text: &str) -> (tempfile::TempDir, i32, Value) {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), text);
    let out = tmp.path().join("out");
    let (code, _) = nlcontrol(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    let s = summary(&out);
    (tmp, code, s)
}

#[test]
fn pure_run_writes_all_outputs() {
    let (tmp, code, s) = run_config(SMALL_PURE);
    assert_eq!(code, 0);
    let out = tmp.path().join("out");
    for f in [
        "iterations.csv",
        "field.csv",
        "trajectory.csv",
        "spectrum.csv",
        "field_pixelated_64.csv",
    ] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    assert_eq!(s["status"], "ok");
    assert_eq!(s["iterations"], 4);
    assert!(s["monotone"].as_bool().unwrap());
    let e = s["field_energy"].as_f64().unwrap() / s["trial_energy"].as_f64().unwrap();
    assert!((s["energy_ratio"].as_f64().unwrap() - e).abs() < 1e-12);
    assert_eq!(s["reconstructions"][0]["pixels"], 64);

    let iters = std::fs::read_to_string(out.join("iterations.csv")).unwrap();
    assert!(iters.starts_with(
        "k,cost_j,projection,fluence_penalty,field_energy,residual,delta_j,p1,p2,safeguarded"
    ));
    assert_eq!(iters.lines().count(), 6);
    let traj = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert!(traj.starts_with("t,projection,orientation"));
    assert_eq!(traj.lines().count(), 258);
    let last: Vec<f64> = traj
        .lines()
        .last()
        .unwrap()
        .split(',')
        .map(|x| x.parse().unwrap())
        .collect();
    assert!((last[1] - s["final_projection"].as_f64().unwrap()).abs() < 1e-12);
}

#[test]
fn identical_config_gives_identical_files() {
    let text = format!("seed = 7\n{SMALL_PURE}\n[trial]\nkind = \"random\"\npeak = 4e-3\n");
    let (a, ca, _) = run_config(&text);
    let (b, cb, _) = run_config(&text);
    assert_eq!((ca, cb), (0, 0));
    for f in [
        "iterations.csv",
        "field.csv",
        "trajectory.csv",
        "spectrum.csv",
    ] {
        let x = std::fs::read(a.path().join("out").join(f)).unwrap();
        let y = std::fs::read(b.path().join("out").join(f)).unwrap();
        assert_eq!(x, y, "{f} differs");
    }
    let other = text.replace("seed = 7", "seed = 8");
    let (c, _, _) = run_config(&other);
    assert_ne!(
        std::fs::read(a.path().join("out/field.csv")).unwrap(),
        std::fs::read(c.path().join("out/field.csv")).unwrap()
    );
}

#[test]
fn single_color_without_trial_is_a_config_error() {
    let text = "problem = \"twocolor_single\"\n[grid]\nn_steps = 64\n[opt]\nn = 2\nlambda = 5.0\n";
    let (_tmp, code, s) = run_config(text);
    assert_eq!(code, 2);
    assert_eq!(s["status"], "error");
    assert_eq!(s["reason"], ZERO_TRIAL_REASON);

    let zero = format!("{text}[trial]\nkind = \"zero\"\n");
    let (_tmp, code, s) = run_config(&zero);
    assert_eq!(code, 2);
    assert_eq!(s["reason"], ZERO_TRIAL_REASON);

    // Non-zero kind whose samples vanish.
    let flat = format!("{text}[trial]\nkind = \"gaussian\"\npeak = 0.0\n");
    let (_tmp, code, s) = run_config(&flat);
    assert_eq!(code, 2);
    assert_eq!(s["reason"], ZERO_TRIAL_REASON);
}

#[test]
fn unknown_keys_are_rejected() {
    let (_tmp, code, s) = run_config(&SMALL_PURE.replace("lambda = 0.05", "lamda = 0.05"));
    assert_eq!(code, 2);
    assert_eq!(s["reason"], "invalid-config");
    assert!(s["message"].as_str().unwrap().contains("lamda"));

    let (_tmp, code, _) = run_config(&format!("{SMALL_PURE}\nextra = 1\n"));
    assert_eq!(code, 2);
    let (_tmp, code, _) = run_config(&SMALL_PURE.replace("[grid]", "[grid]\nsteps = 3"));
    assert_eq!(code, 2);
}

#[test]
fn sections_must_match_the_problem() {
    let (_tmp, code, s) =
        run_config(&SMALL_PURE.replace("problem = \"pure\"", "problem = \"thermal\""));
    assert_eq!(code, 2);
    assert!(s["message"].as_str().unwrap().contains("[thermal]"));
    let (_tmp, code, _) = run_config(&format!("{SMALL_PURE}\n[thermal]\ntemperature_K = 5.0\n"));
    assert_eq!(code, 2);
    let (_tmp, code, _) = run_config(&format!("{SMALL_PURE}\n[trial2]\nkind = \"zero\"\n"));
    assert_eq!(code, 2);
}

#[test]
fn numerical_failures_map_to_exit_code_three() {
    assert_eq!(RunError::from(Error::NoRealRoot { node: 3 }).exit_code(), 3);
    let e = RunError::from(Error::NonMonotone {
        iteration: 2,
        delta: -1.0,
    });
    assert_eq!((e.exit_code(), e.reason()), (3, "non-monotone-step"));
    assert_eq!(
        RunError::from(Error::InvalidConfig("x".into())).exit_code(),
        2
    );
}

#[test]
fn dual_and_thermal_outputs() {
    let dual = r#"
problem = "twocolor_dual"
[grid]
n_steps = 128
[opt]
n = 2
lambda = 1.0
max_iters = 2
[trial]
kind = "gaussian"
peak = 0.03
center = 0.1
fwhm = 0.1
[trial2]
kind = "gaussian"
peak = 0.02
"#;
    let (tmp, code, s) = run_config(dual);
    assert_eq!(code, 0);
    let csv = std::fs::read_to_string(tmp.path().join("out/field_dual.csv")).unwrap();
    assert!(csv.starts_with("t,E1,E2"));
    let late = s["late_e1_fraction"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&late));

    let thermal = r#"
problem = "thermal"
[molecule]
j_max = 9
[grid]
n_steps = 128
[opt]
n = 2
lambda = 6e4
max_iters = 1
[thermal]
temperature_K = 5.0
"#;
    let (tmp, code, s) = run_config(thermal);
    assert_eq!(code, 0, "{s}");
    let out = tmp.path().join("out");
    assert!(std::fs::read_to_string(out.join("trajectory.csv"))
        .unwrap()
        .starts_with("t,projection,normalized_fidelity,orientation"));
    let pops = std::fs::read_to_string(out.join("populations_m2.csv")).unwrap();
    assert!(pops.starts_with("t,j2,j3,j4,j5,j6,j7,j8,j9"));
    assert!(out.join("populations_m9.csv").exists());
    let nf = s["normalized_fidelity"].as_f64().unwrap();
    assert!(nf > 0.0 && nf < 1.0);
}

#[test]
fn pixelate_compares_projections() {
    let (tmp, code, s) = run_config(SMALL_PURE);
    assert_eq!(code, 0);
    let field = tmp.path().join("out/field.csv");
    let out = tmp.path().join("pix");
    let (code, _) = nlcontrol(&[
        "pixelate",
        "--in",
        field.to_str().unwrap(),
        "--pixels",
        "64",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let p = summary(&out);
    let r = &p["reconstructions"][0];
    assert!(
        (p["final_projection"].as_f64().unwrap() - s["final_projection"].as_f64().unwrap()).abs()
            < 1e-12
    );
    // Same reconstruction as the one made inside the run.
    assert!(
        (r["projection"].as_f64().unwrap()
            - s["reconstructions"][0]["projection"].as_f64().unwrap())
        .abs()
            < 1e-12
    );
    assert!(out.join("field_pixelated_64.csv").exists());

    let (code, _) = nlcontrol(&[
        "pixelate",
        "--in",
        field.to_str().unwrap(),
        "--filter-only",
        "--band-max",
        "1e6",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 2);
    assert_eq!(summary(&out)["reason"], "band-exceeds-nyquist");
}

#[test]
fn presets_parse_and_print() {
    for name in presets::names() {
        let spec = presets::load(name).unwrap();
        assert_eq!(spec.output_dir, Path::new("out").join(name), "{name}");
        assert_eq!(spec.grid.n_steps, 4096);
    }
    let (code, text) = nlcontrol(&["presets", "fig3"]);
    assert_eq!(code, 0);
    let spec = RunSpec::from_toml(&text).unwrap();
    assert_eq!(
        (spec.opt.lambda, spec.opt.lambda_scale, spec.opt.eta_scale),
        (6.05e4, 0.1, 10.0)
    );
    let (code, list) = nlcontrol(&["presets"]);
    assert_eq!(code, 0);
    assert_eq!(list.lines().count(), 10);
    assert_eq!(nlcontrol(&["run", "--preset", "fig2"]).0, 2);
}

#[test]
fn reproduce_writes_a_table() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("rep");
    let (code, table) = nlcontrol(&[
        "reproduce",
        "--only",
        "fig1",
        "--max-iters",
        "2",
        "--threads",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    // Two iterations cannot reach the fig1 threshold.
    assert_eq!(code, 1);
    assert!(table.contains("FAIL") && table.contains("PASS"));
    let csv = std::fs::read_to_string(out.join("reproduce.csv")).unwrap();
    assert!(csv.starts_with("preset,check,value,threshold,pass"));
    assert_eq!(csv.lines().count(), 4);
    assert!(out.join("fig1/run_summary.json").exists());
}
