//! Writing a run directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};

use crate::error::{HarnessError, Result};
use crate::run::RunArtifact;
use crate::svg;

/// `iteration,mean_error,std_error,label` rows for every label.
pub fn summary_csv(artifact: &RunArtifact) -> String {
    let mut out = String::from("iteration,mean_error,std_error,label\n");
    for s in &artifact.summaries {
        for (k, (m, d)) in s.mean.iter().zip(&s.std).enumerate() {
            let _ = writeln!(out, "{},{:e},{:e},{}", k + 1, m, d, s.label);
        }
    }
    out
}

/// `label,threshold,iterations`, with `NA` for thresholds never reached.
pub fn thresholds_csv(artifact: &RunArtifact) -> String {
    let mut out = String::from("label,threshold,iterations\n");
    for row in &artifact.thresholds {
        let iterations = row.iterations.map_or("NA".to_string(), |k| k.to_string());
        let _ = writeln!(out, "{},{:e},{}", row.label, row.threshold, iterations);
    }
    out
}

pub fn run_json(artifact: &RunArtifact) -> String {
    let mut runs = Map::new();
    for r in &artifact.runs {
        runs.insert(
            r.label.clone(),
            json!({
                "inits": r.traces.len(),
                "iterations": r.traces.iter().map(|t| t.iterations).collect::<Vec<_>>(),
                "converged": r.traces.iter().all(|t| t.converged),
            }),
        );
    }
    let doc = json!({
        "kind": artifact.config.kind().name(),
        "config": artifact.config,
        "checks": artifact.checks,
        "all_checks_passed": artifact.checks.iter().all(|c| c.passed),
        "thresholds": artifact.thresholds,
        "runs": Value::Object(runs),
        "details": Value::Object(artifact.details.clone()),
        "warnings": artifact.warnings,
    });
    let mut text = serde_json::to_string_pretty(&doc).expect("serialisable");
    text.push('\n');
    text
}

/// Writes every artifact file into `dir` and returns the paths in write order.
pub fn emit_outputs(artifact: &RunArtifact, dir: &Path, with_svg: bool) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let mut written = Vec::new();
    let mut put = |name: &str, contents: &str| -> Result<()> {
        let path = dir.join(name);
        fs::write(&path, contents).map_err(|e| HarnessError::io(&path, e))?;
        written.push(path);
        Ok(())
    };
    for run in &artifact.runs {
        for (i, trace) in run.traces.iter().enumerate() {
            put(&format!("trace_{}_{i}.csv", run.label), &trace.to_csv())?;
        }
    }
    put("summary.csv", &summary_csv(artifact))?;
    put("thresholds.csv", &thresholds_csv(artifact))?;
    put("run.json", &run_json(artifact))?;
    for (name, contents) in &artifact.files {
        put(name, contents)?;
    }
    if with_svg && !artifact.summaries.is_empty() {
        put(
            "convergence.svg",
            &svg::render(&artifact.summaries, artifact.config.kind().name()),
        )?;
    }
    Ok(written)
}
