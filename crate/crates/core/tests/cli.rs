use std::path::Path;
use std::process::{Command, Output};

fn cfplacebo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cfplacebo"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn scenario_with(dir: &Path, name: &str, from: &str, to: &str) -> String {
    let base = stdout(&cfplacebo(&["scenario", "moderate-efficacy"]));
    assert!(base.contains(from), "{from} not in scenario");
    let path = dir.join(name);
    std::fs::write(&path, base.replacen(from, to, 1)).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn size_named_scenario_as_csv() {
    let o = cfplacebo(&["--format", "csv", "size", "moderate-efficacy"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("design,total_py,expected_events,aux_json")
    );
    let row = lines.next().unwrap();
    assert!(row.starts_with("accf,4975,"), "{row}");
}

#[test]
fn invalid_config_exits_1_with_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let path = scenario_with(
        dir.path(),
        "bad.toml",
        "gamma_alt = 1.36",
        "gamma_alt = 0.3",
    );
    let o = cfplacebo(&["size", &path]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("spec.gamma_alt"), "{}", stderr(&o));
}

#[test]
fn unknown_field_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("unk.toml");
    std::fs::write(&path, "design = \"accf\"\nbogus = 1\n").unwrap();
    let o = cfplacebo(&["size", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("unk.toml:2"), "{}", stderr(&o));
}

#[test]
fn infeasible_design_exits_2_with_limiting_power() {
    let dir = tempfile::tempdir().unwrap();
    let path = scenario_with(
        dir.path(),
        "inf.toml",
        "follow_up_py = 1805.0",
        "follow_up_py = 5.0",
    );
    let o = cfplacebo(&["size", &path]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    let limit: f64 = err
        .lines()
        .find_map(|l| l.strip_prefix("limiting_power="))
        .expect("limiting power reported")
        .parse()
        .unwrap();
    assert!((0.0..0.8).contains(&limit), "{limit}");
}

#[test]
fn simulate_is_reproducible_for_a_seed() {
    let run = || {
        let o = cfplacebo(&[
            "--seed",
            "7",
            "--replicates",
            "500",
            "--format",
            "csv",
            "simulate",
            "moderate-efficacy",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        stdout(&o)
            .lines()
            .filter(|l| !l.starts_with("runtime_s"))
            .map(str::to_owned)
            .collect::<Vec<_>>()
    };
    let first = run();
    assert!(first.iter().any(|l| l == "seed,7"), "{first:?}");
    assert!(first.iter().any(|l| l == "replicates,500"));
    assert_eq!(first, run());
}

#[test]
fn sweep_writes_csv_with_schema() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = cfplacebo(&[
        "--replicates",
        "50",
        "--format",
        "csv",
        "--out",
        out,
        "sweep",
        "moderate-efficacy",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("lambda_P,lambda_A,rejection_rate,mc_std_err,status")
    );
    assert_eq!(lines.count(), 21 * 21);
    assert!(csv.contains(",excluded"));
}

#[test]
fn analyze_ni_curve_emits_x_value() {
    let o = cfplacebo(&[
        "--format",
        "csv",
        "analyze",
        "moderate-efficacy",
        "--which",
        "ni-curve",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.starts_with("x,value\n"));
    let min = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap())
        .fold(f64::INFINITY, f64::min);
    assert!((min - 0.0028).abs() < 1e-4, "{min}");
}

#[test]
fn reproduce_writes_outputs_and_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = cfplacebo(&["--out", out, "reproduce", "figA1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("figA1: PASS"));
    assert!(dir.path().join("figA1/summary.csv").exists());
}

#[test]
fn reproduce_unknown_target_is_a_validation_error() {
    let o = cfplacebo(&["reproduce", "table9"]);
    assert_eq!(o.status.code(), Some(1));
}
