use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use erl_core::{uniform_prior, RewardTable, TabularDynamics, Task};

fn erl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_erl"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn two_state_task() -> Task {
    let dynamics = TabularDynamics::from_nested(&[
        vec![vec![0.9, 0.1], vec![0.2, 0.8]],
        vec![vec![0.5, 0.5], vec![0.0, 1.0]],
    ])
    .unwrap();
    let reward = RewardTable::from_state_action(2, 2, &[1.0, 0.0, -0.5, 0.25]).unwrap();
    Task::new(dynamics, reward, 0.9, 2.0, uniform_prior(2, 2).unwrap()).unwrap()
}

#[test]
fn shape_run_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(dir.path(), "c.json", r#"{"num_random_inits": 2}"#);
    let out = dir.path().join("out");
    let res = erl(&[
        "shape",
        "--config",
        &config,
        "--out",
        out.to_str().unwrap(),
        "--size",
        "7",
        "--svg",
    ]);
    assert!(
        res.status.success(),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    for name in [
        "trace_unshaped_0.csv",
        "trace_shaped_1.csv",
        "summary.csv",
        "thresholds.csv",
        "run.json",
        "convergence.svg",
        "potential.json",
    ] {
        assert!(out.join(name).exists(), "missing {name}");
    }
    let run: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("run.json")).unwrap()).unwrap();
    assert_eq!(run["kind"], "shape-compare");
    assert_eq!(run["config"]["grid"]["size"], 7);
    assert_eq!(run["all_checks_passed"], true);
    let stdout = String::from_utf8_lossy(&res.stdout);
    assert!(stdout.contains("policy-identity"));
}

#[test]
fn task_file_paths_resolve_against_config_dir() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "task.json",
        &two_state_task().to_json().unwrap(),
    );
    let config = write(
        dir.path(),
        "c.json",
        r#"{"task_file": "task.json", "num_random_inits": 1}"#,
    );
    let out = dir.path().join("out");
    let res = erl(&["solve", "--config", &config, "--out", out.to_str().unwrap()]);
    assert!(
        res.status.success(),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let sol: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("solution.json")).unwrap()).unwrap();
    assert_eq!(sol["v"].as_array().unwrap().len(), 2);
}

#[test]
fn unmet_identity_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "task.json",
        &two_state_task().to_json().unwrap(),
    );
    write(dir.path(), "phi.json", "[1e12, -1e12]");
    let config = write(
        dir.path(),
        "c.json",
        r#"{"task_file": "task.json", "potential": "phi.json", "num_random_inits": 1, "max_iter": 1000}"#,
    );
    let out = dir.path().join("out");
    let res = erl(&["shape", "--config", &config, "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("identity"));
}

#[test]
fn input_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let res = erl(&["solve", "--config", missing.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(1));

    let bad = write(dir.path(), "bad.json", r#"{"betta": 2}"#);
    assert_eq!(erl(&["solve", "--config", &bad]).status.code(), Some(1));

    let wrong_kind = write(dir.path(), "kind.json", r#"{"kind": "bench"}"#);
    assert_eq!(
        erl(&["solve", "--config", &wrong_kind]).status.code(),
        Some(1)
    );

    let small = write(dir.path(), "small.json", r#"{"num_random_inits": 1}"#);
    assert_eq!(
        erl(&["shape", "--config", &small, "--size", "4"])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn identify_reports_reading_and_zero_residual() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(
        dir.path(),
        "c.json",
        r#"{"grid": {"family": "wall-maze", "size": 7}}"#,
    );
    for (flag, reading) in [
        (None, "standard"),
        (Some("--identifiability-literal"), "literal"),
    ] {
        let out = dir.path().join(reading);
        let mut args = vec![
            "identify",
            "--config",
            &config,
            "--out",
            out.to_str().unwrap(),
        ];
        args.extend(flag);
        let res = erl(&args);
        assert!(
            res.status.success(),
            "{}",
            String::from_utf8_lossy(&res.stderr)
        );
        let run: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out.join("run.json")).unwrap()).unwrap();
        assert_eq!(run["details"]["reading"], reading);
        assert_eq!(run["details"]["max_abs_residual"], 0.0);
        assert_eq!(run["details"]["defeats_identifiability"], false);
    }
}

#[test]
fn overrides_reach_the_config_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(dir.path(), "c.json", r#"{"num_random_inits": 1}"#);
    let out = dir.path().join("out");
    let res = erl(&[
        "dynamics",
        "--config",
        &config,
        "--out",
        out.to_str().unwrap(),
        "--size",
        "7",
        "--seed",
        "5",
        "--slip",
        "0.1",
        "--beta",
        "1.5",
        "--gamma",
        "0.9",
    ]);
    assert!(
        res.status.success(),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let run: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("run.json")).unwrap()).unwrap();
    let c = &run["config"];
    assert_eq!(
        (c["seed"].as_u64(), c["slip"].as_f64()),
        (Some(5), Some(0.1))
    );
    assert_eq!(
        (c["beta"].as_f64(), c["gamma"].as_f64()),
        (Some(1.5), Some(0.9))
    );
    assert!(run["checks"]
        .as_array()
        .unwrap()
        .iter()
        .any(|c| c["name"] == "free-solution-q"));
}
