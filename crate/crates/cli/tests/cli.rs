use std::path::Path;
use std::process::{Command, Output};

fn lipbound(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lipbound"))
        .args(args)
        .env("LIPBOUND_THREADS", "2")
        .output()
        .unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.json");
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn verify_with(text: &str) -> (Output, tempfile::TempDir) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), text);
    let out = dir.path().join("out");
    let o = lipbound(&["verify", "--quiet", "--config", &cfg, "--out", out.to_str().unwrap()]);
    (o, dir)
}

#[test]
fn minimal_config_runs_with_defaults() {
    let (o, dir) = verify_with(r#"{"patches": ["flat"], "checks": ["gram-det", "lifting"]}"#);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("out/results.csv")).unwrap();
    assert!(csv.starts_with("check,patch,case,residual,tolerance,pass,refinement,order,seconds\n"));
    assert!(csv.lines().skip(1).all(|l| l.contains(",true,")));
    assert!(csv
        .lines()
        .any(|l| l.starts_with("lifting,flat,") && l.ends_with(",2,12,0.0000000000000000e0")));
    assert!(dir.path().join("out/report.md").exists());
}

#[test]
fn syntax_error_reports_offset_and_pointer() {
    let (o, _dir) = verify_with(r#"{"patches": [{"name": "p", "graph": "x1 + * x2"}]}"#);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("/patches/0/graph") && err.contains("byte 5"), "{err}");
}

#[test]
fn negative_tolerance_is_a_config_error() {
    let (o, _dir) = verify_with(r#"{"checks": [{"name": "lifting", "tolerance": -1e-3}]}"#);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/checks/0/tolerance"));
}

#[test]
fn unknown_key_is_a_config_error() {
    let (o, _dir) = verify_with(r#"{"patches": ["flat"], "quadrature": {"order": 8, "adaptive": true}}"#);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/quadrature/adaptive"));
}

#[test]
fn missing_config_file_is_an_io_error() {
    let o = lipbound(&["verify", "--config", "/nonexistent/run.json"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn empty_check_list_writes_header_only() {
    let (o, dir) = verify_with(r#"{"checks": []}"#);
    assert_eq!(o.status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("out/results.csv")).unwrap();
    assert_eq!(
        csv,
        "check,patch,case,residual,tolerance,pass,refinement,order,seconds\n"
    );
}

#[test]
fn zero_tolerance_fails_with_exit_one() {
    let (o, dir) = verify_with(r#"{"patches": ["sinusoid"], "checks": [{"name": "lifting", "tolerance": 0}]}"#);
    assert_eq!(o.status.code(), Some(1));
    let md = std::fs::read_to_string(dir.path().join("out/report.md")).unwrap();
    assert!(md.contains("| lifting | sinusoid |") && md.contains("FAIL"));
}

#[test]
fn command_line_filters_apply() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = lipbound(&[
        "verify",
        "--check",
        "gram-det",
        "--patch",
        "corner",
        "--patch",
        "tilted",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let csv = std::fs::read_to_string(out.join("results.csv")).unwrap();
    let patches: Vec<_> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(patches, ["corner", "tilted"]);
    assert_eq!(lipbound(&["verify", "--check", "nope"]).status.code(), Some(2));
    assert_eq!(lipbound(&["verify", "--patch", "nope"]).status.code(), Some(2));
}

#[test]
fn corpus_lists_builtins() {
    let o = lipbound(&["corpus"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    for name in ["flat", "tilted", "sinusoid", "corner", "pyramid"] {
        assert!(text.lines().any(|l| l.starts_with(&format!("{name},"))), "{name}");
    }
}

#[test]
fn measure_reports_areas() {
    let o = lipbound(&["measure", "--patch", "flat", "--patch", "tilted", "--refinements", "1"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let areas: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(areas.len(), 4);
    assert!((areas[0] - 4.0).abs() < 1e-13);
    assert!((areas[3] - 4.0 * 2f64.sqrt()).abs() < 1e-13);
}

#[test]
fn recover_prints_ladder() {
    let o = lipbound(&["recover", "--patch", "tilted", "--degrees", "2,4"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    let errors: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    assert_eq!(errors.len(), 2);
    assert!(errors[1] < errors[0]);
}

#[test]
fn disk_patch_runs_support_checks() {
    let (o, _dir) = verify_with(
        r#"{"patches": [{"name": "bowl", "graph": "0.1*(x1^2+x2^2)", "domain": {"disk": 0.9}, "h": 2}],
            "checks": ["ibp-boundary", "ibp-volume", "h1-from-trace"], "quadrature": {"refinements": 1}}"#,
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
}
