use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const EXAMPLE1: &str = r#"
[plant]
name = "example1"

[controller]
k = 0.2
tau_p = 0.0
u_min = 0.5
u_max = 2.0
delta = 0.1
"#;

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("run.toml");
    fs::write(&path, body).unwrap();
    path
}

fn run(dir: &Path, sub: &str, body: &str, extra: &[&str]) -> Output {
    let cfg = write_config(dir, body);
    Command::new(env!("CARGO_BIN_EXE_satpi"))
        .arg(sub)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .args(extra)
        .output()
        .unwrap()
}

fn json(path: PathBuf) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn simulate_tracking_exits_zero() {
    let dir = TempDir::new().unwrap();
    let body = format!("{EXAMPLE1}\n[sim]\nt_end = 300.0\n\n[initial]\nu_i = 0.5\n\n[reference]\nsegments = [[0.0, 2.0]]\n");
    let out = run(dir.path(), "simulate", &body, &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = json(dir.path().join("out/summary.json"));
    assert!(summary["final_error"].as_f64().unwrap() < 1e-6);
    assert!(dir.path().join("out/trajectory.csv").exists());
    let manifest = fs::read_to_string(dir.path().join("out/manifest.txt")).unwrap();
    assert_eq!(manifest, "trajectory.csv\nevents.csv\nsummary.json\n");
}

#[test]
fn inverted_bounds_exit_two_with_field_path() {
    let dir = TempDir::new().unwrap();
    let body = EXAMPLE1.replace("u_min = 0.5", "u_min = 3.0");
    let out = run(dir.path(), "simulate", &body, &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("controller.u_min"));
}

#[test]
fn unknown_key_exits_two() {
    let dir = TempDir::new().unwrap();
    let body = format!("{EXAMPLE1}\n[sim]\nstep = 0.1\n");
    let out = run(dir.path(), "simulate", &body, &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_config_file_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_satpi"))
        .args(["simulate", "--config"])
        .arg(dir.path().join("absent.toml"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

// 1/(s+1)^3 under proportional gain tau_p * k = 500 has poles with real part
// near 3, so the state overflows long before t_end.
const OVER_GAIN: &str = r#"
[plant]
name = "linear"
a = [[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [-1.0, -3.0, -3.0]]
b = [0.0, 0.0, 1.0]
c = [1.0, 0.0, 0.0]

[controller]
k = 1000.0
tau_p = 0.5
u_min = 0.5
u_max = 2.0
delta = 0.1

[sim]
h = 0.001
t_end = 1000.0

[initial]
x = [1.0, 0.0, 0.0]
u_i = 1.0

[reference]
segments = [[0.0, 1.5]]
"#;

#[test]
fn over_gain_exits_three_and_keeps_partial_trajectory() {
    let dir = TempDir::new().unwrap();
    let out = run(dir.path(), "simulate", OVER_GAIN, &[]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let traj = fs::read_to_string(dir.path().join("out/trajectory.csv")).unwrap();
    assert!(traj.lines().count() > 100);
    assert!(!dir.path().join("out/summary.json").exists());
}

#[test]
fn analyze_flags_unstable_linear_plant() {
    let dir = TempDir::new().unwrap();
    let body = r#"
[plant]
name = "linear"
a = [[1.0, 0.0], [1.0, -2.0]]
b = [1.0, 0.0]
c = [0.0, 1.0]

[controller]
k = 0.1
tau_p = 0.0
u_min = 0.5
u_max = 2.0
delta = 0.1
"#;
    let out = run(dir.path(), "analyze", body, &[]);
    assert_eq!(out.status.code(), Some(4));
    let rep = json(dir.path().join("out/assumptions.json"));
    assert_eq!(rep["a1_pass"], false);
    assert!(rep["max_spectral_abscissa"].as_f64().unwrap() > 0.0);
}

#[test]
fn analyze_reports_decreasing_map() {
    let dir = TempDir::new().unwrap();
    let body = r#"
[plant]
name = "linear"
a = [[-1.0]]
b = [1.0]
c = [-1.0]

[controller]
k = 0.1
tau_p = 0.0
u_min = 0.5
u_max = 2.0
delta = 0.1
"#;
    let out = run(dir.path(), "analyze", body, &[]);
    assert_eq!(out.status.code(), Some(4));
    let rep = json(dir.path().join("out/assumptions.json"));
    assert_eq!(rep["a1_pass"], true);
    assert_eq!(rep["a2_pass"], false);
    assert!(rep["offending_pair"].is_array());
}

#[test]
fn analyze_example_passes() {
    let dir = TempDir::new().unwrap();
    let out = run(dir.path(), "analyze", EXAMPLE1, &[]);
    assert_eq!(out.status.code(), Some(0));
    let rep = json(dir.path().join("out/assumptions.json"));
    let y = rep["y_range"].as_array().unwrap();
    assert!((y[0].as_f64().unwrap() - 0.25).abs() < 1e-9);
    assert!((y[1].as_f64().unwrap() - 4.0).abs() < 1e-9);
    assert!(dir.path().join("out/equilibrium_curve.csv").exists());
}

const SMALL_CAMPAIGN: &str = r#"
[campaign]
k_range = [0.05, 0.3]
r_points = 3
ic_nodes = 2
t_end = 400.0
dwell = false
global = false
"#;

// One reference, started on its own equilibrium: every gain passes.
#[test]
fn certify_single_equilibrium_reports_upper_end() {
    let dir = TempDir::new().unwrap();
    let body = format!(
        "{EXAMPLE1}
[campaign]
k_range = [0.05, 1.0]
r_grid = [1.0]
ic_grid = [{{ x = [1.0, 1.0], u_i = 1.0 }}]
dwell = false
global = false
"
    );
    let out = run(dir.path(), "certify", &body, &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let cert = json(dir.path().join("out/certificate.json"));
    assert_eq!(cert["kappa_star"].as_f64().unwrap(), 1.0);
    assert_eq!(cert["verdicts"]["local_stability"], "supported");
    assert!(cert["verdicts"].get("step_tracking").is_none());
}

// Integral loop of this plant is stable for small k, unstable on a middle
// band and stable again for large k.
#[test]
fn certify_with_non_monotone_trace_is_inconclusive() {
    let dir = TempDir::new().unwrap();
    let body = r#"
[plant]
name = "linear"
a = [[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [-1.325, -4.566, -3.936]]
b = [0.0, 0.0, 1.0]
c = [15.57, 2.41, 2.76]

[controller]
k = 0.05
tau_p = 0.0
u_min = 0.5
u_max = 2.0
delta = 0.1

[campaign]
k_range = [0.05, 15.0]
r_grid = [14.6875]
ic_nodes = 2
t_end = 400.0
dwell = false
global = false
"#;
    let out = run(dir.path(), "certify", body, &[]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    let cert = json(dir.path().join("out/certificate.json"));
    assert_eq!(cert["verdicts"]["local_stability"], "inconclusive");
    let trace = cert["campaign"]["gain_trace"].as_array().unwrap();
    let passes: Vec<f64> = trace.iter().map(|p| p[1].as_f64().unwrap()).collect();
    assert_eq!(passes.first(), Some(&1.0));
    assert_eq!(passes.last(), Some(&1.0));
    assert!(passes.contains(&0.0));
}

#[test]
fn certify_is_deterministic_across_thread_counts() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let body = format!("{EXAMPLE1}{SMALL_CAMPAIGN}");
    let ra = run(a.path(), "certify", &body, &["--seed", "7", "--jobs", "1"]);
    let rb = run(b.path(), "certify", &body, &["--seed", "7", "--jobs", "3"]);
    assert_eq!(ra.status.code(), rb.status.code());
    for f in ["certificate.json", "gain_runs.csv", "gain_trace.csv"] {
        let fa = fs::read(a.path().join("out").join(f)).unwrap();
        let fb = fs::read(b.path().join("out").join(f)).unwrap();
        assert!(fa == fb, "{f} differs");
    }
    assert_eq!(json(a.path().join("out/certificate.json"))["campaign"]["seed"], 7);
}

#[test]
fn sweep_with_windup_block() {
    let dir = TempDir::new().unwrap();
    let body = format!(
        "{EXAMPLE1}
[campaign]
r_points = 2
far_count = 4
t_end = 600.0
global_k = 0.05

[windup]
k = 0.1
r_nominal = 1.0
r_excursion = 6.0
t_on = 10.0
duration = 50.0
t_end = 200.0
"
    );
    let out = run(dir.path(), "sweep", &body, &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rep = json(dir.path().join("out/sweep.json"));
    assert_eq!(rep["verdict"], "supported");
    assert_eq!(rep["runs"], 8);
    assert_eq!(rep["windup"]["saturating"]["max_u_i"], 2.0);
}
