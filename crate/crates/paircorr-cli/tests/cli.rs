use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use paircorr::config::RunConfig;
use paircorr::pipeline::CSV_COLUMNS;

const BIN: &str = env!("CARGO_BIN_EXE_paircorr");
const CONFIGS: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/configs");

const SMALL: &str = r#"
seed = 3
n_particles = 4.0

[grid]
dim = 1
points = 8
box_length = 6.0

[potential]
kind = "gaussian"
strength = 0.05
width = 0.8

[initial]
kind = "random_smooth"
max_mode = 2

[time]
dt = 0.02
final_time = 0.4

[picard]
tol = 1e-12
max_iter = 60
tp_method = "leibniz"

[output]
dir = "unused"
"#;

fn run(args: &[&str], out: Option<&Path>) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args).env_remove("PAIRCORR_OUT");
    if let Some(out) = out {
        cmd.arg("--out").arg(out);
    }
    cmd.output().expect("binary runs")
}

fn small_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn errors_run_writes_all_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), SMALL);
    let out = tmp.path().join("out");
    let o = run(&["errors", "--config", &cfg], Some(&out));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["run.csv", "summary.json", "constants.calib", "config.echo", "timing.json"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let csv = fs::read_to_string(out.join("run.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], CSV_COLUMNS.join(","));
    assert_eq!(lines.len() - 1, 21);
    let bound_col = CSV_COLUMNS.iter().position(|c| *c == "bound").unwrap();
    let last: f64 = lines[21].split(',').nth(bound_col).unwrap().parse().unwrap();
    assert!(last > 0.0);

    let echo = RunConfig::from_toml(&fs::read_to_string(out.join("config.echo")).unwrap()).unwrap();
    let mut expected = RunConfig::from_toml(SMALL).unwrap();
    expected.output.dir = out.clone();
    assert_eq!(echo, expected);

    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["status"], "ok");
    assert_eq!(summary["picard"]["converged"], true);
}

#[test]
fn identical_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), SMALL);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(run(&["errors", "--config", &cfg], Some(&a)).status.success());
    assert!(run(&["errors", "--config", &cfg], Some(&b)).status.success());
    for f in ["run.csv", "summary.json", "constants.calib"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn seed_flag_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), SMALL);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(run(&["hartree", "--config", &cfg], Some(&a)).status.success());
    assert!(run(&["hartree", "--config", &cfg, "--seed", "4"], Some(&b)).status.success());
    assert_ne!(fs::read(a.join("run.csv")).unwrap(), fs::read(b.join("run.csv")).unwrap());
    let echo = RunConfig::from_toml(&fs::read_to_string(b.join("config.echo")).unwrap()).unwrap();
    assert_eq!(echo.seed, 4);
}

#[test]
fn output_dir_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), SMALL);
    let env_out = tmp.path().join("env");
    let o = Command::new(BIN).args(["hartree", "--config", &cfg]).env("PAIRCORR_OUT", &env_out).output().unwrap();
    assert!(o.status.success());
    assert!(env_out.join("run.csv").exists());

    let flag_out = tmp.path().join("flag");
    let o = Command::new(BIN)
        .args(["hartree", "--config", &cfg, "--out"])
        .arg(&flag_out)
        .env("PAIRCORR_OUT", tmp.path().join("ignored"))
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(flag_out.join("run.csv").exists());
    assert!(!tmp.path().join("ignored").exists());
}

#[test]
fn bad_input_fails_with_message() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["errors"], Some(tmp.path()));
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("--config"));

    let cfg = small_config(tmp.path(), &SMALL.replace("dt = 0.02", "dt = 0.03"));
    let o = run(&["errors", "--config", &cfg], Some(tmp.path()));
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("configuration"));
}

#[test]
fn failed_stage_still_flushes_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), SMALL);
    let out = tmp.path().join("out");
    let o = run(&["endtoend", "--config", &cfg], Some(&out));
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("endtoend: "));
    let summary = fs::read_to_string(out.join("summary.json")).unwrap();
    assert!(summary.contains("\"status\": \"failed\""));
    let csv = fs::read_to_string(out.join("run.csv")).unwrap();
    assert_eq!(csv.lines().count(), 22);
}

#[test]
fn zero_potential_gives_zero_kernel() {
    let tmp = tempfile::tempdir().unwrap();
    let text = SMALL.replace("kind = \"gaussian\"\nstrength = 0.05\nwidth = 0.8", "kind = \"zero\"");
    let cfg = small_config(tmp.path(), &text);
    let out = tmp.path().join("out");
    assert!(run(&["errors", "--config", &cfg], Some(&out)).status.success());
    let csv = fs::read_to_string(out.join("run.csv")).unwrap();
    for col in ["k_norm", "chi0", "chi1", "f", "g", "bound"] {
        let i = CSV_COLUMNS.iter().position(|c| *c == col).unwrap();
        assert!(csv.lines().skip(1).all(|l| l.split(',').nth(i) == Some("0e0")), "{col}");
    }
}

#[test]
fn two_site_end_to_end_and_oracle() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = format!("{CONFIGS}/two_site.toml");
    let out = tmp.path().join("e2e");
    let o = run(&["endtoend", "--config", &cfg], Some(&out));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["end_to_end"]["inequality_holds"], true);
    assert!(summary["end_to_end"]["max_derivative_residual"].as_f64().unwrap() < 1e-6);

    let out = tmp.path().join("oracle");
    let o = run(&["oracle", "--config", &cfg], Some(&out));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rep: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("verification.json")).unwrap()).unwrap();
    assert_eq!(rep["checks"].as_array().unwrap().len(), 12);
}

#[test]
fn calibrate_reproduces_checked_in_constants() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["calibrate"], Some(tmp.path()));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(tmp.path().join("constants.calib")).unwrap();
    let fresh = paircorr::error_norms::parse_calibration(&text).unwrap();
    let shipped = paircorr::error_norms::parse_calibration(paircorr::error_norms::CALIBRATION_FILE).unwrap();
    assert_eq!(fresh.len(), shipped.len());
    for (a, b) in fresh.iter().zip(&shipped) {
        assert_eq!(a.name, b.name);
        assert!((a.value - b.value).abs() < 1e-8);
    }
}

#[test]
fn benchmark_config_is_valid() {
    let c = RunConfig::load(Path::new(&format!("{CONFIGS}/benchmark.toml"))).unwrap();
    assert_eq!(c.time.n_steps().unwrap(), 100);
}
