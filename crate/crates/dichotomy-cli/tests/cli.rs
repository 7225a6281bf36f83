use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_dichotomy");

fn dichotomy(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn report(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn list_is_stable_and_every_name_resolves() {
    let a = dichotomy(&["list"]);
    let b = dichotomy(&["list"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    let names: Vec<&str> = text.lines().map(|l| l.split('\t').next().unwrap()).collect();
    for required in [
        "remark42_detect",
        "remark42_met",
        "const_hyperbolic_forward",
        "roughness_table",
        "deterministic_corollary",
    ] {
        assert!(names.contains(&required), "{required} missing from {names:?}");
    }
    for line in text.lines() {
        let (_, description) = line.split_once('\t').expect("name and description");
        assert!(!description.is_empty());
    }
}

#[test]
fn every_builtin_runs_with_its_expected_exit_code() {
    let tmp = tempfile::tempdir().unwrap();
    let text = String::from_utf8(dichotomy(&["list"]).stdout).unwrap();
    for name in text.lines().map(|l| l.split('\t').next().unwrap()) {
        let dir = tmp.path().join(name);
        let out = dichotomy(&["run", name, "--out", dir.to_str().unwrap()]);
        let expected = if name == "rotation_nogap" { 2 } else { 0 };
        assert_eq!(
            out.status.code(),
            Some(expected),
            "{name}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        let r = report(&dir);
        assert_eq!(r["scenario"]["name"], name);
        assert_eq!(r["version"], env!("CARGO_PKG_VERSION"));
        assert!(r["wall_time_s"].as_f64().unwrap() < 60.0);
    }
}

#[test]
fn staircase_detect_reports_the_stable_projector() {
    let tmp = tempfile::tempdir().unwrap();
    let out = dichotomy(&["run", "remark42_detect", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let r = report(tmp.path());
    assert_eq!(r["status"], "pass");
    let p = &r["results"]["projection_at_base"];
    let want = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.0]];
    for i in 0..3 {
        for j in 0..3 {
            assert!((p[i][j].as_f64().unwrap() - want[i][j]).abs() < 1e-8);
        }
    }
    for c in r["checks"].as_array().unwrap() {
        assert!(c["margin"].is_number() && c["value"].is_number() && c["limit"].is_number());
    }
}

#[test]
fn negative_window_is_an_input_error_naming_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("bad.toml");
    std::fs::write(
        &file,
        r#"
name = "bad"
pipeline = "detect"
[driver]
kind = "rotation"
[generator]
kind = "remark42"
[window]
n = -5
[weight]
beta = 0.5
"#,
    )
    .unwrap();
    let out = dichotomy(&["run", file.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("window.n"));
}

#[test]
fn type_errors_carry_the_field_path() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("bad.toml");
    std::fs::write(
        &file,
        "name = \"bad\"\npipeline = \"detect\"\n[driver]\nkind = \"rotation\"\n[generator]\nkind = \"remark42\"\n[window]\nn = 40\n[weight]\nbeta = \"half\"\n",
    )
    .unwrap();
    let out = dichotomy(&["run", file.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("weight.beta"));
}

#[test]
fn unknown_scenario_is_an_input_error() {
    let out = dichotomy(&["run", "no_such_scenario"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_gap_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = dichotomy(&["run", "rotation_nogap", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let r = report(tmp.path());
    assert_eq!(r["status"], "error");
    assert!(r["error"].as_str().unwrap().contains("gap"));
}

#[test]
fn csv_outputs_are_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    for name in ["remark42_detect", "roughness_table", "kac_rotation"] {
        let a = tmp.path().join(format!("{name}_a"));
        let b = tmp.path().join(format!("{name}_b"));
        assert!(dichotomy(&["run", name, "--out", a.to_str().unwrap(), "--seed", "5"]).status.success());
        assert!(dichotomy(&["run", name, "--out", b.to_str().unwrap(), "--seed", "5", "--threads", "3"])
            .status
            .success());
        let mut csvs = 0;
        for entry in std::fs::read_dir(&a).unwrap() {
            let path = entry.unwrap().path();
            if path.extension().is_some_and(|e| e == "csv") {
                let other = b.join(path.file_name().unwrap());
                assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(other).unwrap(), "{}", path.display());
                csvs += 1;
            }
        }
        assert!(csvs > 0);
    }
}

#[test]
fn custom_table_generator_loads_blocks_next_to_the_scenario() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("blocks.csv"), "# a(n) rows\n0.5,0,0,2\n0.4,0,0,3\n").unwrap();
    let file = tmp.path().join("table.toml");
    std::fs::write(
        &file,
        r#"
name = "table"
pipeline = "deterministic"
[driver]
kind = "integer_shift"
[generator]
kind = "custom_table"
path = "blocks.csv"
[window]
n = 20
[weight]
beta = 0.5
[expect]
projection = [[1.0, 0.0], [0.0, 0.0]]
"#,
    )
    .unwrap();
    let out = dichotomy(&["run", file.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn version_flag_prints_the_package_version() {
    let out = dichotomy(&["--version"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains(env!("CARGO_PKG_VERSION")));
}
