use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn goxn(args: &[&str], output_env: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_goxn"));
    cmd.args(args).env_remove("GOXN_OUTPUT_DIR");
    if let Some(dir) = output_env {
        cmd.env("GOXN_OUTPUT_DIR", dir);
    }
    cmd.output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).to_string()
}

fn scenario(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("config/scenarios")
        .join(format!("{name}.yaml"))
        .display()
        .to_string()
}

#[test]
fn no_args_prints_usage() {
    let o = goxn(&[], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
}

#[test]
fn unknown_flag_is_usage_error() {
    let o = goxn(&["suite", "catalog", "--frobnicate"], None);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn process_names_missing_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = goxn(&["process", dir.path().to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("report.yaml"), "{}", stderr(&o));
    assert!(!stderr(&o).contains("panicked"));
}

#[test]
fn run_honours_output_env_then_process_and_compare() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    for name in ["baseline", "tracing-high"] {
        let o = goxn(&["run", &scenario(name), "--seed", "3"], Some(root));
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        assert!(root.join(name).join("report.yaml").is_file());
        let run_dir = root.join(name);
        let o = goxn(&["process", run_dir.to_str().unwrap()], None);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let out = root.join("cmp");
    let o = goxn(
        &[
            "compare",
            root.join("tracing-high").to_str().unwrap(),
            root.join("baseline").to_str().unwrap(),
            "--baseline",
            "baseline",
            "--output",
            out.to_str().unwrap(),
        ],
        None,
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let plot = fs::read_to_string(out.join("plot_data.csv")).unwrap();
    assert_eq!(plot.lines().count(), 1 + 2 * 7 * 3);
    let cmp = fs::read_to_string(out.join("comparison.csv")).unwrap();
    assert!(cmp.lines().nth(1).unwrap().starts_with("baseline,"));
}

#[test]
fn compare_without_baseline_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = goxn(&["run", &scenario("tracing-low"), "-o", dir.path().to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let run = dir.path().join("tracing-low");
    assert_eq!(goxn(&["process", run.to_str().unwrap()], None).status.code(), Some(0));
    let o = goxn(&["compare", run.to_str().unwrap(), "--baseline", "baseline", "-o", dir.path().to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("baseline"));
}

#[test]
fn suite_over_spec_directory() {
    let dir = tempfile::tempdir().unwrap();
    let specs = dir.path().join("specs");
    fs::create_dir(&specs).unwrap();
    for name in ["baseline", "monitoring-high"] {
        fs::copy(scenario(name), specs.join(format!("{name}.yaml"))).unwrap();
    }
    let out = dir.path().join("out");
    let o = goxn(&["suite", specs.to_str().unwrap(), "-o", out.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let suite = fs::read_to_string(out.join("suite.yaml")).unwrap();
    assert!(suite.contains("monitoring-high") && suite.contains("status: ok"));
    assert!(out.join("comparison.csv").is_file());
}

#[test]
fn suite_with_invalid_spec_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let specs = dir.path().join("specs");
    fs::create_dir(&specs).unwrap();
    fs::copy(scenario("baseline"), specs.join("a.yaml")).unwrap();
    let bad = fs::read_to_string(scenario("tracing-low"))
        .unwrap()
        .replace("percent: 5", "percent: 5\n      extra: 1");
    fs::write(specs.join("b.yaml"), bad).unwrap();
    let o = goxn(&["suite", specs.to_str().unwrap(), "-o", dir.path().join("out").to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(2), "invalid spec is a usage error: {}", stderr(&o));
}

#[test]
fn sim_target_from_relative_topology() {
    let dir = tempfile::tempdir().unwrap();
    let topo = Path::new(env!("CARGO_MANIFEST_DIR")).join("config/topology.yaml");
    fs::copy(&topo, dir.path().join("topo.yaml")).unwrap();
    let spec = fs::read_to_string(scenario("baseline"))
        .unwrap()
        .replace("sue: sim:default", "sue: sim:topo.yaml");
    fs::write(dir.path().join("spec.yaml"), spec).unwrap();
    let o = goxn(
        &["run", dir.path().join("spec.yaml").to_str().unwrap(), "-o", dir.path().join("out").to_str().unwrap()],
        None,
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}

#[test]
fn external_env_needs_prometheus() {
    let dir = tempfile::tempdir().unwrap();
    let spec = fs::read_to_string(scenario("baseline"))
        .unwrap()
        .replace("sue: sim:default", "sue: http://127.0.0.1:9");
    fs::write(dir.path().join("spec.yaml"), spec).unwrap();
    let o = goxn(&["run", dir.path().join("spec.yaml").to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--prometheus"), "{}", stderr(&o));
}
