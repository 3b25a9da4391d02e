use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const REFERENCE_RING: &str = "\
[geometry]
outer_radius_R = 40.0
inner_radius_r = 25.0
step_height_m = 4.0
chamber_spacing_l = 12.0
wall_thickness_t = 2.0
chamber_length_s = 28.8
chamber_count_N = 5
";

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_peristaltic")).args(args).output().unwrap()
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn write_config(dir: &TempDir, name: &str, body: &str) -> PathBuf {
    let path = dir.path().join(name);
    fs::write(&path, body).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn rates(path: &Path) -> Vec<(u32, f64)> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let (id, rate) = l.split_once(',').unwrap();
            (id.parse().unwrap(), rate.parse().unwrap())
        })
        .collect()
}

fn summary_field(stdout: &str, key: &str) -> String {
    stdout.lines().find_map(|l| l.strip_prefix(&format!("{key}: "))).unwrap_or_default().to_string()
}

#[test]
fn validate_accepts_reference_ring() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "reference.toml", REFERENCE_RING);
    let out = bin(&["validate", "--config", s(&cfg)]);
    assert!(out.status.success(), "{}", text(&out.stdout));
    assert!(text(&out.stdout).ends_with("ok\n"));
}

#[test]
fn validate_names_the_alternation_rule() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "bad.toml", "[station]\nmodules = [\"L\", \"C\", \"L\"]\n");
    let out = bin(&["validate", "--config", s(&cfg)]);
    assert!(!out.status.success());
    assert!(text(&out.stdout).contains("alternation rule"), "{}", text(&out.stdout));
}

#[test]
fn missing_geometry_field_is_named() {
    let dir = TempDir::new().unwrap();
    let body = REFERENCE_RING.replace("inner_radius_r = 25.0\n", "");
    let cfg = write_config(&dir, "missing.toml", &body);
    let out = bin(&["validate", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    let err = text(&out.stderr);
    assert!(err.contains("inner_radius_r") && err.contains("line"), "{err}");
}

#[test]
fn calibrate_writes_one_row_per_compression_module() {
    let dir = TempDir::new().unwrap();
    let out_path = dir.path().join("b.csv");
    let out = bin(&["calibrate", "--out", s(&out_path)]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let rows = rates(&out_path);
    assert_eq!(rows.iter().map(|r| r.0).collect::<Vec<_>>(), vec![1, 3, 5]);
    assert!(rows.iter().all(|r| (r.1 - 4.33).abs() <= 1e-6));
}

#[test]
fn noisy_calibration_is_seeded() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "noisy.toml", "[plant]\nnoise_sigma = 0.05\n");
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    for p in [&a, &b] {
        assert!(bin(&["calibrate", "--config", s(&cfg), "--seed", "17", "--out", s(p)]).status.success());
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert!(rates(&a).iter().all(|r| (r.1 / 4.33 - 1.0).abs() < 0.02));
}

#[test]
fn calibration_with_object_fails_without_output() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "obj.toml", "[calibration]\nobject_present = true\n");
    let out_path = dir.path().join("b.csv");
    let out = bin(&["calibrate", "--config", s(&cfg), "--out", s(&out_path)]);
    assert!(!out.status.success());
    assert!(text(&out.stderr).contains("contaminated"), "{}", text(&out.stderr));
    assert!(!out_path.exists());
}

#[test]
fn run_nominal_scenario() {
    let dir = TempDir::new().unwrap();
    let baselines = dir.path().join("b.csv");
    assert!(bin(&["calibrate", "--out", s(&baselines)]).status.success());
    let telemetry = dir.path().join("t.csv");
    let out = bin(&["run", "--baselines", s(&baselines), "--out", s(&telemetry)]);
    let stdout = text(&out.stdout);
    assert!(out.status.success(), "{stdout}");
    assert!(summary_field(&stdout, "detections").parse::<u32>().unwrap() >= 1);
    assert_eq!(summary_field(&stdout, "drops"), "0");
    assert_eq!(summary_field(&stdout, "faults"), "0");
    assert_ne!(summary_field(&stdout, "final z"), summary_field(&stdout, "initial z"));
    let csv = fs::read_to_string(&telemetry).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "time_s,module_id,kind,pressure_kPa,valve,inflation_mm,object_z_mm,phase,event");
}

#[test]
fn run_thin_object_is_undetectable() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "thin.toml", "[object]\nradius_ratio = 0.4\n");
    let out = bin(&["run", "--config", s(&cfg), "--out", s(&dir.path().join("t.csv"))]);
    let stdout = text(&out.stdout);
    assert!(out.status.success(), "{stdout}");
    assert!(summary_field(&stdout, "outcome").starts_with("undetectable object"), "{stdout}");
    assert_eq!(summary_field(&stdout, "detections"), "0");
}

#[test]
fn zero_duration_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let out = bin(&["run", "--duration", "0.0", "--out", s(&dir.path().join("t.csv"))]);
    assert!(!out.status.success());
    assert!(text(&out.stderr).contains("duration_s"), "{}", text(&out.stderr));
}

#[test]
fn faults_give_a_nonzero_exit() {
    let dir = TempDir::new().unwrap();
    let baselines = dir.path().join("b.csv");
    assert!(bin(&["calibrate", "--out", s(&baselines)]).status.success());
    let cfg = write_config(&dir, "slowvent.toml", "[plant]\nk_vent = 0.01\n");
    let out = bin(&["run", "--config", s(&cfg), "--baselines", s(&baselines), "--out", s(&dir.path().join("t.csv"))]);
    let stdout = text(&out.stdout);
    assert_eq!(out.status.code(), Some(1), "{stdout}{}", text(&out.stderr));
    assert_eq!(summary_field(&stdout, "faults"), "1");
    assert!(stdout.contains("timeout"), "{stdout}");
}

fn sweep(param: &str, range: &str) -> (Vec<(f64, Option<f64>)>, String) {
    let out = bin(&["sweep", "--param", param, "--range", range]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let stdout = text(&out.stdout);
    let mut lines = stdout.lines();
    assert_eq!(lines.next(), Some("value,d_c_over_r"));
    let rows = lines
        .map(|l| {
            let (v, d) = l.split_once(',').unwrap();
            (v.parse().unwrap(), d.parse().ok())
        })
        .collect();
    (rows, text(&out.stderr))
}

fn strictly_decreasing(rows: &[(f64, Option<f64>)]) -> bool {
    rows.windows(2).all(|w| w[1].1.unwrap() < w[0].1.unwrap())
}

#[test]
fn sweep_chamber_count_prints_argmax() {
    let (rows, stderr) = sweep("N", "1:10:1");
    assert_eq!(rows.len(), 10);
    let argmax: f64 = stderr.trim().strip_prefix("argmax N = ").unwrap().split(' ').next().unwrap().parse().unwrap();
    assert!([3.0, 4.0, 5.0, 6.0].contains(&argmax), "{stderr}");
}

#[test]
fn sweep_thickness_and_spacing_decrease() {
    assert!(strictly_decreasing(&sweep("t", "1:4:0.5").0));
    assert!(strictly_decreasing(&sweep("l", "6:20:2").0));
}

#[test]
fn sweep_marks_infeasible_points() {
    let out = bin(&["sweep", "--param", "l", "--range", "12,45"]);
    assert!(out.status.success());
    assert!(text(&out.stdout).lines().any(|l| l == "45.000000,infeasible"), "{}", text(&out.stdout));
}

#[test]
fn sweep_rejects_bad_ranges() {
    let out = bin(&["sweep", "--param", "N", "--range", "10:1:1"]);
    assert_eq!(out.status.code(), Some(2));
}
