use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn postsel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_postsel"))
        .args(args)
        .env_remove("POSTSEL_WORKERS")
        .output()
        .expect("binary runs")
}

fn stderr_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stderr).expect("stderr is one JSON object")
}

fn write_points(path: &Path, rows: &[(usize, f64, f64, f64)]) {
    let mut text = String::from("L,x,y,sigma\n");
    for (l, x, y, s) in rows {
        text.push_str(&format!("{l},{x},{y},{s}\n"));
    }
    fs::write(path, text).unwrap();
}

const SPEC: &str = r#"
model = "rqc"
sweep = [0.2]
sizes = [4]
realizations = 2
probes = ["i3_1", "log_z"]
base_seed = 7
output = "OUT"
steps = { per_site = 1, offset = 0 }
"#;

#[test]
fn version_prints_crate_version() {
    let out = postsel(&["version"]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), format!("postsel v{}", env!("CARGO_PKG_VERSION")));
}

#[test]
fn validate_accepts_good_spec() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("spec.toml");
    fs::write(&cfg, SPEC).unwrap();
    let out = postsel(&["validate", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["tasks"], 2);
}

#[test]
fn invalid_specs_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        SPEC.replace("sizes = [4]", "sizes = [5]"),
        SPEC.replace("base_seed = 7", "base_seed = 7\ncolour = 3"),
        SPEC.replace("\"i3_1\"", "\"i3_0\""),
        SPEC.replace("sweep = [0.2]", "sweep = [1.5]"),
    ];
    for (k, text) in cases.iter().enumerate() {
        let cfg = dir.path().join(format!("bad{k}.toml"));
        fs::write(&cfg, text).unwrap();
        let out = postsel(&["validate", cfg.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(2), "case {k}");
        assert_eq!(stderr_json(&out)["error"], "invalid_input");
    }
}

#[test]
fn malformed_worker_env_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("spec.toml");
    fs::write(&cfg, SPEC).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_postsel"))
        .args(["validate", cfg.to_str().unwrap(), "--workers", "2"])
        .env("POSTSEL_WORKERS", "not-a-number")
        .output()
        .unwrap();
    // the environment is parsed before the flag overrides it
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulate_then_collapse_single_size_reports_no_overlap() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("spec.toml");
    let out_dir = dir.path().join("run");
    fs::write(&cfg, SPEC.replace("OUT", out_dir.to_str().unwrap())).unwrap();
    let out = postsel(&["simulate", cfg.to_str().unwrap(), "--workers", "1", "--sweep", "0.1,0.3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = out_dir.join("records.csv");
    assert!(csv.exists() && out_dir.join("aggregate.json").exists());

    let out = postsel(&["analyze", "collapse", "--input", csv.to_str().unwrap(), "--probe", "i3_1", "--resamples", "4"]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_json(&out);
    assert!(err["message"].as_str().unwrap().contains("no overlap"), "{err}");
}

#[test]
fn ceff_recovers_casimir_amplitude() {
    let dir = tempfile::tempdir().unwrap();
    let pts = dir.path().join("f.csv");
    let c = 0.5;
    let rows: Vec<_> =
        (2..=6).map(|k| 4 * k).map(|l| (l, 0.0, 0.4 - PI * c / (6.0 * (l * l) as f64), 1e-3)).collect();
    write_points(&pts, &rows);
    let json = dir.path().join("fit.json");
    let out = postsel(&[
        "analyze", "ceff", "--input", pts.to_str().unwrap(), "--resamples", "20", "--output", json.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    let got = v["params"]["c_eff"].as_f64().unwrap();
    assert!((got - c).abs() < 1e-8, "{got}");
}

#[test]
fn ceff_needs_four_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let pts = dir.path().join("f.csv");
    write_points(&pts, &[(8, 0.0, 0.1, 0.01), (12, 0.0, 0.2, 0.01), (16, 0.0, 0.3, 0.01)]);
    let out = postsel(&["analyze", "ceff", "--input", pts.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"], "invalid_input");
}

#[test]
fn missing_input_is_an_error() {
    let out = postsel(&["analyze", "power", "--input", "/nonexistent/points.csv"]);
    assert_ne!(out.status.code(), Some(0));
    assert!(stderr_json(&out)["message"].is_string());
}
