use std::fs;
use std::path::Path;

use erl_harness::{emit_outputs, run, ExperimentConfig, ExperimentKind, Overrides};

fn config(kind: ExperimentKind, json: &str) -> ExperimentConfig {
    ExperimentConfig::from_json(json, Path::new("."))
        .unwrap()
        .resolve(kind, &Overrides::default())
        .unwrap()
}

fn read_errors(path: &Path) -> Vec<f64> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("iteration,error"));
    lines
        .enumerate()
        .map(|(k, l)| {
            let (it, e) = l.split_once(',').unwrap();
            assert_eq!(it.parse::<usize>().unwrap(), k + 1);
            e.parse().unwrap()
        })
        .collect()
}

fn summary_rows(path: &Path, label: &str) -> Vec<(f64, f64)> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .filter_map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[3] == label).then(|| (f[1].parse().unwrap(), f[2].parse().unwrap()))
        })
        .collect()
}

#[test]
fn three_iteration_run_has_three_rows_per_init() {
    let cfg = config(
        ExperimentKind::Solve,
        r#"{"grid": {"family": "wall-maze", "size": 5}, "max_iter": 3, "num_random_inits": 2}"#,
    );
    let art = run(&cfg).unwrap();
    assert!(!art.warnings.is_empty());
    let dir = tempfile::tempdir().unwrap();
    emit_outputs(&art, dir.path(), false).unwrap();
    for i in 0..2 {
        assert_eq!(
            read_errors(&dir.path().join(format!("trace_q_{i}.csv"))).len(),
            3
        );
    }
    assert_eq!(summary_rows(&dir.path().join("summary.csv"), "q").len(), 3);
    assert!(!dir.path().join("convergence.svg").exists());
}

#[test]
fn single_init_has_zero_std() {
    let cfg = config(
        ExperimentKind::ShapeCompare,
        r#"{"grid": {"family": "wall-maze", "size": 7}, "num_random_inits": 1}"#,
    );
    let art = run(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    emit_outputs(&art, dir.path(), true).unwrap();
    for label in ["shaped", "unshaped"] {
        let rows = summary_rows(&dir.path().join("summary.csv"), label);
        assert!(!rows.is_empty());
        assert!(rows.iter().all(|(_, std)| *std == 0.0));
    }
    assert!(dir.path().join("convergence.svg").exists());
}

#[test]
fn summary_mean_is_column_mean_of_trace_files() {
    let cfg = config(
        ExperimentKind::ComposeCompare,
        r#"{"grid": {"family": "spiral", "size": 7}, "num_random_inits": 10, "seed": 3}"#,
    );
    let art = run(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    emit_outputs(&art, dir.path(), false).unwrap();
    for label in ["direct", "corrective"] {
        let traces: Vec<Vec<f64>> = (0..10)
            .map(|i| read_errors(&dir.path().join(format!("trace_{label}_{i}.csv"))))
            .collect();
        let rows = summary_rows(&dir.path().join("summary.csv"), label);
        let len = traces.iter().map(Vec::len).max().unwrap();
        assert_eq!(rows.len(), len);
        for (k, (mean, std)) in rows.iter().enumerate() {
            let col: Vec<f64> = traces
                .iter()
                .map(|t| *t.get(k).unwrap_or_else(|| t.last().unwrap()))
                .collect();
            let m = col.iter().sum::<f64>() / col.len() as f64;
            let sd = (col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / col.len() as f64).sqrt();
            assert!(
                (mean - m).abs() <= 1e-12 * m.abs().max(1e-300),
                "{k}: {mean} vs {m}"
            );
            assert!(
                (std - sd).abs() <= 1e-9 * sd.max(1e-300) + 1e-300,
                "{k}: {std} vs {sd}"
            );
        }
    }
    assert!(dir.path().join("zero_shot.csv").exists());
}

#[test]
fn iterations_to_threshold_are_monotone() {
    let cfg = config(
        ExperimentKind::Bench,
        r#"{"sizes": [7], "wall_heights": [2], "num_random_inits": 3,
            "thresholds": [1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7]}"#,
    );
    let art = run(&cfg).unwrap();
    for summary in &art.summaries {
        let its: Vec<usize> = cfg
            .thresholds
            .iter()
            .map(|t| art.iterations(&summary.label, *t).unwrap())
            .collect();
        assert!(
            its.windows(2).all(|w| w[0] <= w[1]),
            "{}: {its:?}",
            summary.label
        );
    }
    assert!(art.checks.iter().all(|c| c.passed));
    let dir = tempfile::tempdir().unwrap();
    emit_outputs(&art, dir.path(), false).unwrap();
    let savings = fs::read_to_string(dir.path().join("savings.csv")).unwrap();
    assert!(savings.starts_with("sweep,value,threshold,unshaped,shaped,saved\n"));
    assert_eq!(savings.lines().count(), 1 + 2 * 7);
}

#[test]
fn unreached_thresholds_are_na() {
    let cfg = config(
        ExperimentKind::Solve,
        r#"{"grid": {"family": "wall-maze", "size": 5}, "max_iter": 2, "num_random_inits": 1, "thresholds": [1e-9]}"#,
    );
    let art = run(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    emit_outputs(&art, dir.path(), false).unwrap();
    let text = fs::read_to_string(dir.path().join("thresholds.csv")).unwrap();
    assert_eq!(text, "label,threshold,iterations\nq,1e-9,NA\n");
}

#[test]
fn unwritable_output_directory_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let cfg = config(ExperimentKind::InverseRl, r#"{"num_random_inits": 1}"#);
    let art = run(&cfg).unwrap();
    let err = emit_outputs(&art, &blocker.join("sub"), false).unwrap_err();
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn fixed_seed_runs_are_byte_identical() {
    let cfg = config(
        ExperimentKind::DynamicsTransfer,
        r#"{"grid": {"family": "wall-maze", "size": 7}, "num_random_inits": 3, "seed": 11}"#,
    );
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let files_a = emit_outputs(&run(&cfg).unwrap(), a.path(), true).unwrap();
    let files_b = emit_outputs(&run(&cfg).unwrap(), b.path(), true).unwrap();
    assert_eq!(files_a.len(), files_b.len());
    for (x, y) in files_a.iter().zip(&files_b) {
        assert_eq!(
            fs::read(x).unwrap(),
            fs::read(y).unwrap(),
            "{}",
            x.display()
        );
    }
    let other = config(
        ExperimentKind::DynamicsTransfer,
        r#"{"grid": {"family": "wall-maze", "size": 7}, "num_random_inits": 3, "seed": 12}"#,
    );
    let c = tempfile::tempdir().unwrap();
    emit_outputs(&run(&other).unwrap(), c.path(), false).unwrap();
    assert_ne!(
        fs::read(a.path().join("trace_direct_0.csv")).unwrap(),
        fs::read(c.path().join("trace_direct_0.csv")).unwrap()
    );
}
