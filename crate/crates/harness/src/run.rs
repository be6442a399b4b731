//! Experiment pipelines.

use std::fs;
use std::path::Path;

use erl_core::envs::{
    grid_to_task, parse_grid, simple_wall_maze, spiral_maze, GridDocument, GridSpec, Side,
};
use erl_core::random::{
    random_policy, random_q, random_state_values, random_task, RandomTaskParams,
};
use erl_core::shaping::{
    defeats_identifiability, identifiability_residual, inverse_reward, shape,
    IdentifiabilityReading, Potential,
};
use erl_core::solver::bellman_residual;
use erl_core::transfer::{
    combine, compose, dynamics_change_corrective, free_solution_reward, CompositionFn,
    CompositionSpec,
};
use erl_core::{solve, ConvergenceTrace, PolicyTable, QTable, SoftSolution, SolveOptions, Task};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::config::{ExperimentConfig, ExperimentKind, GridSource};
use crate::error::{HarnessError, Result};

/// Traces of one label, one per initialisation.
#[derive(Debug, Clone)]
pub struct LabeledTraces {
    pub label: String,
    pub traces: Vec<ConvergenceTrace>,
}

/// Per-iteration mean and population standard deviation over the inits.
/// Shorter traces are padded with their last error.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub label: String,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Summary {
    pub fn from_traces(label: &str, traces: &[ConvergenceTrace]) -> Self {
        let len = traces.iter().map(|t| t.errors.len()).max().unwrap_or(0);
        let n = traces.len().max(1) as f64;
        let at = |t: &ConvergenceTrace, k: usize| {
            t.errors.get(k).or(t.errors.last()).copied().unwrap_or(0.0)
        };
        let mut mean = Vec::with_capacity(len);
        let mut std = Vec::with_capacity(len);
        for k in 0..len {
            let m = traces.iter().map(|t| at(t, k)).sum::<f64>() / n;
            let var = traces.iter().map(|t| (at(t, k) - m).powi(2)).sum::<f64>() / n;
            mean.push(m);
            std.push(var.sqrt());
        }
        Self {
            label: label.to_string(),
            mean,
            std,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdRow {
    pub label: String,
    pub threshold: f64,
    /// Iterations for the mean trace; `None` when never reached.
    pub iterations: Option<usize>,
}

/// One verified identity.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub residual: f64,
    pub tolerance: f64,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub location: Option<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct RunArtifact {
    pub config: ExperimentConfig,
    pub runs: Vec<LabeledTraces>,
    pub summaries: Vec<Summary>,
    pub thresholds: Vec<ThresholdRow>,
    pub checks: Vec<Check>,
    pub warnings: Vec<String>,
    pub details: Map<String, Value>,
    /// Extra named files (solutions, tables).
    pub files: Vec<(String, String)>,
}

impl RunArtifact {
    pub fn new(config: ExperimentConfig) -> Self {
        Self {
            config,
            runs: Vec::new(),
            summaries: Vec::new(),
            thresholds: Vec::new(),
            checks: Vec::new(),
            warnings: Vec::new(),
            details: Map::new(),
            files: Vec::new(),
        }
    }

    pub fn push_runs(&mut self, label: &str, traces: Vec<ConvergenceTrace>) {
        let unconverged = traces.iter().filter(|t| !t.converged).count();
        if unconverged > 0 {
            self.warnings.push(format!(
                "{unconverged} `{label}` run(s) stopped at max_iter before reaching tolerance"
            ));
        }
        let summary = Summary::from_traces(label, &traces);
        for &threshold in &self.config.thresholds {
            self.thresholds.push(ThresholdRow {
                label: label.to_string(),
                threshold,
                iterations: erl_core::solver::iterations_to_threshold(&summary.mean, threshold),
            });
        }
        self.summaries.push(summary);
        self.runs.push(LabeledTraces {
            label: label.to_string(),
            traces,
        });
    }

    /// Records a check; a residual above `tolerance` aborts the run.
    pub fn verify(
        &mut self,
        name: &str,
        residual: f64,
        tolerance: f64,
        location: Option<(usize, usize)>,
    ) -> Result<()> {
        let passed = residual <= tolerance;
        self.checks.push(Check {
            name: name.to_string(),
            residual,
            tolerance,
            passed,
            location,
        });
        if passed {
            Ok(())
        } else {
            Err(HarnessError::Identity {
                name: name.to_string(),
                residual,
                tolerance,
                location,
            })
        }
    }

    /// Iterations-to-threshold of a label's mean trace.
    pub fn iterations(&self, label: &str, threshold: f64) -> Option<usize> {
        self.thresholds
            .iter()
            .find(|r| r.label == label && r.threshold == threshold)
            .and_then(|r| r.iterations)
    }

    pub fn summary(&self, label: &str) -> Option<&Summary> {
        self.summaries.iter().find(|s| s.label == label)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    fn file(&mut self, name: &str, contents: String) {
        self.files.push((name.to_string(), contents));
    }
}

/// Serialised optimal solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionDocument {
    pub q: Vec<Vec<f64>>,
    pub v: Vec<f64>,
    pub policy: Vec<Vec<f64>>,
    pub iterations: usize,
    pub converged: bool,
}

impl SolutionDocument {
    pub fn new(solution: &SoftSolution) -> Self {
        Self {
            q: solution.q.to_nested(),
            v: solution.v.clone(),
            policy: solution.policy.to_nested(),
            iterations: solution.trace.iterations,
            converged: solution.trace.converged,
        }
    }
}

pub fn run(config: &ExperimentConfig) -> Result<RunArtifact> {
    match config.kind() {
        ExperimentKind::Solve => run_solve(config),
        ExperimentKind::ShapeCompare => run_shape_compare(config),
        ExperimentKind::ComposeCompare => run_compose_compare(config),
        ExperimentKind::DynamicsTransfer => run_dynamics_transfer(config),
        ExperimentKind::InverseRl => run_inverse_rl(config),
        ExperimentKind::Identifiability => run_identifiability(config),
        ExperimentKind::Bench => run_bench(config),
    }
}

fn traced_options(config: &ExperimentConfig) -> SolveOptions {
    SolveOptions {
        tolerance: config.tolerance,
        max_iter: config.max_iter,
    }
}

/// Options for the solves behind identity checks: tight enough that the
/// fixed-point error `tol / (1 - gamma)` is a tenth of the identity tolerance.
pub fn verification_options(config: &ExperimentConfig, gamma: f64) -> SolveOptions {
    SolveOptions {
        tolerance: config.identity_tolerance * (1.0 - gamma) / 10.0,
        max_iter: config.max_iter.max(1_000_000),
    }
}

/// Initial tables shared by every label of a run, so comparisons are paired.
pub fn initial_tables(
    config: &ExperimentConfig,
    num_states: usize,
    num_actions: usize,
    gamma: f64,
) -> Vec<QTable> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let bound = config.init_scale / (1.0 - gamma);
    (0..config.num_random_inits)
        .map(|_| {
            if bound > 0.0 {
                random_q(&mut rng, num_states, num_actions, bound)
            } else {
                QTable::zeros(num_states, num_actions)
            }
        })
        .collect()
}

fn traces<F>(inits: &[QTable], run: F) -> Result<Vec<ConvergenceTrace>>
where
    F: Fn(&QTable) -> erl_core::Result<SoftSolution> + Sync,
{
    inits
        .par_iter()
        .map(|q0| run(q0).map(|s| s.trace).map_err(HarnessError::from))
        .collect()
}

fn read_json<T: serde::de::DeserializeOwned>(config: &ExperimentConfig, path: &Path) -> Result<T> {
    let path = config.resolve_path(path);
    let text = fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
    serde_json::from_str(&text).map_err(|source| HarnessError::Parse { path, source })
}

fn read_task(config: &ExperimentConfig, path: &Path) -> Result<Task> {
    let path = config.resolve_path(path);
    let text = fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
    Task::from_json(&text).map_err(|e| HarnessError::Input(format!("{}: {e}", path.display())))
}

fn read_potential(config: &ExperimentConfig, path: &Path, num_states: usize) -> Result<Potential> {
    let phi: Potential = read_json(config, path)?;
    if phi.len() != num_states {
        return Err(HarnessError::Input(format!(
            "{}: potential has {} entries for {num_states} states",
            path.display(),
            phi.len()
        )));
    }
    Ok(phi)
}

/// Grid for `source` with the given slip. Grid files keep their own slip
/// unless `slip` is nonzero.
pub fn grid_spec(config: &ExperimentConfig, source: &GridSource, slip: f64) -> Result<GridSpec> {
    let spec = match source {
        GridSource::WallMaze {
            size,
            wall_height,
            goal,
        } => simple_wall_maze(*size, *wall_height, goal.unwrap_or(Side::Left))?,
        GridSource::Spiral { size } => spiral_maze(*size)?.0,
        GridSource::Map { rows } => parse_grid(&rows.join("\n"))?,
        GridSource::File { path } => {
            let doc: GridDocument = read_json(config, path)?;
            let spec = GridSpec::from_document(&doc)?;
            if slip == 0.0 {
                return Ok(spec);
            }
            spec
        }
    };
    Ok(spec.with_slip(slip)?)
}

fn grid_task(art: &mut RunArtifact, spec: &GridSpec) -> Result<Task> {
    let config = &art.config;
    let built = grid_to_task(spec, config.gamma(), config.beta(), None)?;
    art.warnings.extend(built.warnings);
    Ok(built.task)
}

/// The task named by `task_file`, or built from the grid.
fn primary_task(art: &mut RunArtifact, slip: f64) -> Result<Task> {
    let config = art.config.clone();
    match &config.task_file {
        Some(path) => read_task(&config, path),
        None => {
            let spec = grid_spec(&config, &config.grid_or_default(), slip)?;
            grid_task(art, &spec)
        }
    }
}

fn worst_cell(
    ns: usize,
    na: usize,
    diff: impl Fn(usize, usize) -> f64,
) -> (f64, Option<(usize, usize)>) {
    let mut worst = (0.0, None);
    for s in 0..ns {
        for a in 0..na {
            let d = diff(s, a);
            if worst.1.is_none() || d > worst.0 {
                worst = (d, Some((s, a)));
            }
        }
    }
    worst
}

fn policy_gap(x: &PolicyTable, y: &PolicyTable) -> (f64, Option<(usize, usize)>) {
    worst_cell(x.num_states(), x.num_actions(), |s, a| {
        (x.get(s, a) - y.get(s, a)).abs()
    })
}

fn q_gap(x: &QTable, y: &QTable) -> (f64, Option<(usize, usize)>) {
    worst_cell(x.num_states(), x.num_actions(), |s, a| {
        (x.get(s, a) - y.get(s, a)).abs()
    })
}

fn v_gap(a: &[f64], b: &[f64]) -> (f64, Option<(usize, usize)>) {
    let mut worst = (0.0, None);
    for (s, (x, y)) in a.iter().zip(b).enumerate() {
        let d = (x - y).abs();
        if worst.1.is_none() || d > worst.0 {
            worst = (d, Some((s, 0)));
        }
    }
    worst
}

/// Checks `expected` against `actual` for Q, V and the policy.
fn verify_solution(
    art: &mut RunArtifact,
    prefix: &str,
    actual: &SoftSolution,
    expected: &SoftSolution,
) -> Result<()> {
    let tol = art.config.identity_tolerance;
    let (r, at) = q_gap(&actual.q, &expected.q);
    art.verify(&format!("{prefix}q-identity"), r, tol, at)?;
    let (r, at) = v_gap(&actual.v, &expected.v);
    art.verify(&format!("{prefix}v-identity"), r, tol, at)?;
    let (r, at) = policy_gap(&actual.policy, &expected.policy);
    art.verify(&format!("{prefix}policy-identity"), r, tol, at)
}

fn q_csv(q: &QTable, column: &str) -> String {
    let mut out = format!("state,action,{column}\n");
    for s in 0..q.num_states() {
        for a in 0..q.num_actions() {
            out.push_str(&format!("{s},{a},{:e}\n", q.get(s, a)));
        }
    }
    out
}

fn to_pretty<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("serialisable");
    text.push('\n');
    text
}

pub fn run_solve(config: &ExperimentConfig) -> Result<RunArtifact> {
    let mut art = RunArtifact::new(config.clone());
    let task = primary_task(&mut art, config.slip)?;
    let opts = traced_options(config);
    let inits = initial_tables(config, task.num_states(), task.num_actions(), task.gamma);
    let q = traces(&inits, |q0| solve(&task, &opts, Some(q0)))?;
    art.push_runs("q", q);

    let solution = solve(&task, &verification_options(config, task.gamma), None)?;
    let (residual, s, a) = bellman_residual(&solution.q, &task)?;
    art.verify(
        "bellman-residual",
        residual,
        config.identity_tolerance,
        Some((s, a)),
    )?;
    art.file(
        "solution.json",
        to_pretty(&SolutionDocument::new(&solution)),
    );
    Ok(art)
}

/// Target and potential for a shaping comparison.
fn shaping_inputs(art: &mut RunArtifact, source: &GridSource) -> Result<(Task, Potential)> {
    let config = art.config.clone();
    let target = match &config.task_file {
        Some(path) => read_task(&config, path)?,
        None => {
            let spec = grid_spec(&config, source, config.slip)?;
            grid_task(art, &spec)?
        }
    };
    let ns = target.num_states();
    if let Some(path) = &config.potential {
        return Ok((target, read_potential(&config, path, ns)?));
    }
    if let Some(path) = &config.potential_from_solution {
        let doc: SolutionDocument = read_json(&config, path)?;
        if doc.v.len() != ns {
            return Err(HarnessError::Input(format!(
                "{}: solution has {} states, target has {ns}",
                path.display(),
                doc.v.len()
            )));
        }
        return Ok((target, Potential::new(doc.v)?));
    }
    match (source, &config.task_file) {
        (
            GridSource::WallMaze {
                size,
                wall_height,
                goal,
            },
            None,
        ) => {
            let other = match goal.unwrap_or(Side::Left) {
                Side::Left => Side::Right,
                Side::Right => Side::Left,
            };
            let spec = simple_wall_maze(*size, *wall_height, other)?.with_slip(config.slip)?;
            let sibling = grid_task(art, &spec)?;
            if !sibling.is_reward_varying_with(&target) {
                return Err(HarnessError::Input("sibling task does not share dynamics with the target".into()));
            }
            let solution = solve(&sibling, &verification_options(&config, sibling.gamma), None)?;
            Ok((target, Potential::from_solution(&solution)?))
        }
        _ => Err(HarnessError::Input(
            "shape-compare needs `potential` or `potential_from_solution` unless the grid is a wall maze".into(),
        )),
    }
}

/// Solves `target` and its shaped version from the shared inits and checks
/// `Q~* = Q* - phi`, `V~* = V* - phi` and equal policies.
fn shape_compare_on(
    art: &mut RunArtifact,
    target: &Task,
    phi: &Potential,
    suffix: &str,
) -> Result<()> {
    let config = art.config.clone();
    let shaped = shape(target, phi)?;
    let opts = traced_options(&config);
    let inits = initial_tables(
        &config,
        target.num_states(),
        target.num_actions(),
        target.gamma,
    );
    let unshaped_traces = traces(&inits, |q0| solve(target, &opts, Some(q0)))?;
    let shaped_traces = traces(&inits, |q0| solve(&shaped.task, &opts, Some(q0)))?;
    art.push_runs(&format!("unshaped{suffix}"), unshaped_traces);
    art.push_runs(&format!("shaped{suffix}"), shaped_traces);

    let vopts = verification_options(&config, target.gamma);
    let (original, shaped_sol) = rayon::join(
        || solve(target, &vopts, None),
        || solve(&shaped.task, &vopts, None),
    );
    let (original, shaped_sol) = (original?, shaped_sol?);
    let tol = config.identity_tolerance;
    let (r, at) = policy_gap(&shaped_sol.policy, &original.policy);
    art.verify(&format!("policy-identity{suffix}"), r, tol, at)?;
    let expected_q = original.q.add_state_values(phi.as_slice(), -1.0)?;
    let (r, at) = q_gap(&shaped_sol.q, &expected_q);
    art.verify(&format!("shaped-q-identity{suffix}"), r, tol, at)?;
    let expected_v: Vec<f64> = original
        .v
        .iter()
        .zip(phi.as_slice())
        .map(|(v, p)| v - p)
        .collect();
    let (r, at) = v_gap(&shaped_sol.v, &expected_v);
    art.verify(&format!("shaped-v-identity{suffix}"), r, tol, at)
}

pub fn run_shape_compare(config: &ExperimentConfig) -> Result<RunArtifact> {
    let mut art = RunArtifact::new(config.clone());
    let source = config.grid_or_default();
    let (target, phi) = shaping_inputs(&mut art, &source)?;
    shape_compare_on(&mut art, &target, &phi, "")?;
    art.file("potential.json", to_pretty(&phi));
    Ok(art)
}

/// Shaping sweeps over maze size and wall height.
pub fn run_bench(config: &ExperimentConfig) -> Result<RunArtifact> {
    let mut art = RunArtifact::new(config.clone());
    let (base_size, base_height) = match config.grid_or_default() {
        GridSource::WallMaze {
            size, wall_height, ..
        } => (size, wall_height),
        other => {
            return Err(HarnessError::Input(format!(
                "bench sweeps wall mazes, got {other:?}"
            )))
        }
    };
    let sizes = config.sizes.clone().unwrap_or_else(|| vec![7, 11, 15]);
    let heights = config.wall_heights.clone().unwrap_or_else(|| vec![1, 4, 7]);
    let mut sweeps: Vec<(&str, usize, GridSource)> = Vec::new();
    for &size in &sizes {
        let wall_height = base_height.min(size.saturating_sub(2)).max(1);
        sweeps.push((
            "size",
            size,
            GridSource::WallMaze {
                size,
                wall_height,
                goal: None,
            },
        ));
    }
    for &h in &heights {
        sweeps.push((
            "height",
            h,
            GridSource::WallMaze {
                size: base_size,
                wall_height: h,
                goal: None,
            },
        ));
    }

    let mut savings = String::from("sweep,value,threshold,unshaped,shaped,saved\n");
    let mut detail = Map::new();
    for (sweep, value, source) in sweeps {
        let suffix = format!("_{sweep}{value}");
        let (target, phi) = shaping_inputs(&mut art, &source)?;
        shape_compare_on(&mut art, &target, &phi, &suffix)?;
        let mut per_threshold = Vec::new();
        for &t in &config.thresholds {
            let u = art.iterations(&format!("unshaped{suffix}"), t);
            let s = art.iterations(&format!("shaped{suffix}"), t);
            let saved = match (u, s) {
                (Some(u), Some(s)) => Some(u as i64 - s as i64),
                _ => None,
            };
            let fmt = |x: Option<i64>| x.map_or("NA".to_string(), |x| x.to_string());
            savings.push_str(&format!(
                "{sweep},{value},{t:e},{},{},{}\n",
                fmt(u.map(|x| x as i64)),
                fmt(s.map(|x| x as i64)),
                fmt(saved)
            ));
            per_threshold.push(json!({"threshold": t, "unshaped": u, "shaped": s, "saved": saved}));
        }
        detail.insert(format!("{sweep}{value}"), Value::Array(per_threshold));
    }
    art.details.insert("savings".into(), Value::Object(detail));
    art.file("savings.csv", savings);
    Ok(art)
}

fn composition_members(art: &mut RunArtifact) -> Result<Vec<Task>> {
    let config = art.config.clone();
    if let Some(paths) = &config.members {
        return paths.iter().map(|p| read_task(&config, p)).collect();
    }
    match config.grid_or_default() {
        GridSource::Spiral { size } => {
            let (left, down) = spiral_maze(size)?;
            let left = grid_task(art, &left.with_slip(config.slip)?)?;
            let down = grid_task(art, &down.with_slip(config.slip)?)?;
            Ok(vec![left, down])
        }
        other => Err(HarnessError::Input(format!(
            "compose-compare needs `members` or a spiral grid, got {other:?}"
        ))),
    }
}

pub fn run_compose_compare(config: &ExperimentConfig) -> Result<RunArtifact> {
    let mut art = RunArtifact::new(config.clone());
    let members = composition_members(&mut art)?;
    let f = match &config.composition {
        Some(doc) => CompositionFn::from_document(doc)?,
        None => CompositionFn::Min,
    };
    let spec = CompositionSpec::new(members, f.clone())?;
    let composed = spec.composed_task()?;
    let vopts = verification_options(config, composed.gamma);
    let member_solutions: Vec<SoftSolution> = spec
        .member_tasks
        .par_iter()
        .map(|t| solve(t, &vopts, None))
        .collect::<erl_core::Result<_>>()?;
    let (prior, corrective) = compose(&spec, &member_solutions)?;

    let opts = traced_options(config);
    let inits = initial_tables(
        config,
        composed.num_states(),
        composed.num_actions(),
        composed.gamma,
    );
    let direct_traces = traces(&inits, |q0| solve(&composed, &opts, Some(q0)))?;
    let corrective_traces = traces(&inits, |k0| corrective.solve(&opts, Some(k0)))?;
    art.push_runs("direct", direct_traces);
    art.push_runs("corrective", corrective_traces);

    let (k, direct) = rayon::join(
        || corrective.solve(&vopts, None),
        || solve(&composed, &vopts, None),
    );
    let (k, direct) = (k?, direct?);
    let combined = combine(&corrective, &k.q, vopts.tolerance)?;
    verify_solution(&mut art, "", &combined, &direct)?;

    art.details.insert(
        "composition".into(),
        serde_json::to_value(f.to_document()).expect("serialisable"),
    );
    art.details.insert("max_abs_k".into(), json!(k.q.max_abs()));
    art.file("zero_shot.csv", q_csv(&prior.f_of_q, "value"));
    art.file(
        "solution.json",
        to_pretty(&SolutionDocument::new(&combined)),
    );
    Ok(art)
}

/// Dynamics `q` for the transfer target.
fn target_dynamics(art: &mut RunArtifact, default_slip: f64) -> Result<Task> {
    let config = art.config.clone();
    if let Some(path) = &config.target_task_file {
        return read_task(&config, path);
    }
    if config.task_file.is_some() {
        return Err(HarnessError::Input(
            "a task_file base needs `target_task_file` for the second dynamics".into(),
        ));
    }
    let slip = config.target_slip.unwrap_or(default_slip);
    let spec = grid_spec(&config, &config.grid_or_default(), slip)?;
    grid_task(art, &spec)
}

pub fn run_dynamics_transfer(config: &ExperimentConfig) -> Result<RunArtifact> {
    let mut art = RunArtifact::new(config.clone());
    let base = primary_task(&mut art, config.slip)?;
    let q_task = target_dynamics(&mut art, 0.2)?;
    let target = base.with_dynamics(q_task.dynamics.clone())?;
    let vopts = verification_options(config, base.gamma);
    let solution = solve(&base, &vopts, None)?;
    let corrective = dynamics_change_corrective(&solution, &target.dynamics, &base)?;

    let opts = traced_options(config);
    let inits = initial_tables(config, base.num_states(), base.num_actions(), base.gamma);
    let direct_traces = traces(&inits, |q0| solve(&target, &opts, Some(q0)))?;
    let corrective_traces = traces(&inits, |k0| corrective.solve(&opts, Some(k0)))?;
    art.push_runs("direct", direct_traces);
    art.push_runs("corrective", corrective_traces);

    let (k, direct) = rayon::join(
        || corrective.solve(&vopts, None),
        || solve(&target, &vopts, None),
    );
    let (k, direct) = (k?, direct?);
    let combined = combine(&corrective, &k.q, vopts.tolerance)?;
    verify_solution(&mut art, "", &combined, &direct)?;

    let r_bar = free_solution_reward(&solution, &target.dynamics, &base)?;
    let free_task = target.with_reward(r_bar)?;
    let free = solve(&free_task, &vopts, None)?;
    let (r, at) = q_gap(&free.q, &solution.q);
    art.verify("free-solution-q", r, config.identity_tolerance, at)?;

    art.details.insert("max_abs_k".into(), json!(k.q.max_abs()));
    art.file(
        "solution.json",
        to_pretty(&SolutionDocument::new(&combined)),
    );
    Ok(art)
}

pub fn run_inverse_rl(config: &ExperimentConfig) -> Result<RunArtifact> {
    let mut art = RunArtifact::new(config.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let env = match &config.task_file {
        Some(path) => read_task(config, path)?,
        None if config.grid.is_some() => primary_task(&mut art, config.slip)?,
        None => random_task(
            &mut rng,
            &RandomTaskParams {
                num_states: config.num_states,
                num_actions: 3,
                gamma: config.gamma(),
                beta: config.beta(),
                reward_range: (-1.0, 1.0),
                random_prior: false,
            },
        )?,
    };
    let (ns, na) = (env.num_states(), env.num_actions());
    let policy = match &config.policy_file {
        Some(path) => {
            let rows: Vec<Vec<f64>> = read_json(config, path)?;
            PolicyTable::from_nested(&rows)?
        }
        None => random_policy(&mut rng, ns, na, 0.05)?,
    };
    let value = match &config.value_file {
        Some(path) => read_potential(config, path, ns)?,
        None => Potential::new(random_state_values(&mut rng, ns, 1.0))?,
    };
    let reward = inverse_reward(
        &policy,
        &value,
        &env.dynamics,
        env.gamma,
        env.beta,
        &env.prior,
    )?;
    let task = env.with_reward(reward)?;

    let opts = traced_options(config);
    let inits = initial_tables(config, ns, na, task.gamma);
    let forward = traces(&inits, |q0| solve(&task, &opts, Some(q0)))?;
    art.push_runs("forward", forward);

    let solution = solve(&task, &verification_options(config, task.gamma), None)?;
    let tol = config.identity_tolerance;
    let (r, at) = policy_gap(&solution.policy, &policy);
    art.verify("recovered-policy", r, tol, at)?;
    let (r, at) = v_gap(&solution.v, value.as_slice());
    art.verify("recovered-value", r, tol, at)?;

    art.file("reward.json", to_pretty(&task.reward.to_nested()));
    art.file("target_policy.json", to_pretty(&policy.to_nested()));
    art.file("target_value.json", to_pretty(&value));
    art.file(
        "solution.json",
        to_pretty(&SolutionDocument::new(&solution)),
    );
    Ok(art)
}

pub fn run_identifiability(config: &ExperimentConfig) -> Result<RunArtifact> {
    let mut art = RunArtifact::new(config.clone());
    let p_task = primary_task(&mut art, config.slip)?;
    let q_task = target_dynamics(&mut art, config.slip)?;
    let ns = p_task.num_states();
    let gamma_tilde = config.gamma_tilde.unwrap_or(p_task.gamma);
    let phi = match &config.potential {
        Some(path) => read_potential(config, path, ns)?,
        None => Potential::zeros(ns),
    };
    let psi = match &config.psi {
        Some(path) => read_potential(config, path, ns)?,
        None => Potential::zeros(ns),
    };
    let reading = if config.identifiability_literal {
        IdentifiabilityReading::Literal
    } else {
        IdentifiabilityReading::Standard
    };
    let residual = identifiability_residual(
        &p_task.dynamics,
        p_task.gamma,
        &phi,
        &q_task.dynamics,
        gamma_tilde,
        &psi,
        reading,
    )?;
    let (max, at) = q_gap(&residual, &QTable::zeros(ns, p_task.num_actions()));
    let tol = config.identity_tolerance;
    art.details.insert(
        "reading".into(),
        serde_json::to_value(reading).expect("serialisable"),
    );
    art.details.insert("max_abs_residual".into(), json!(max));
    art.details.insert("location".into(), json!(at));
    art.details
        .insert("condition_holds".into(), json!(max <= tol));
    art.details.insert(
        "defeats_identifiability".into(),
        json!(defeats_identifiability(&residual, &phi, &psi, tol)),
    );
    art.file("identifiability.csv", q_csv(&residual, "residual"));
    Ok(art)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(errors: Vec<f64>) -> ConvergenceTrace {
        ConvergenceTrace {
            iterations: errors.len(),
            errors,
            converged: true,
            tolerance: 0.0,
        }
    }

    #[test]
    fn summary_pads_with_last_value() {
        let s = Summary::from_traces("x", &[trace(vec![4.0, 2.0, 1.0]), trace(vec![2.0])]);
        assert_eq!(s.mean, vec![3.0, 2.0, 1.5]);
        assert_eq!(s.std, vec![1.0, 0.0, 0.5]);
    }

    #[test]
    fn single_trace_has_zero_std() {
        let s = Summary::from_traces("x", &[trace(vec![3.0, 1.0])]);
        assert_eq!(s.std, vec![0.0, 0.0]);
    }

    #[test]
    fn inits_are_seeded_and_bounded() {
        let mut config = ExperimentConfig::new(ExperimentKind::Solve);
        config.num_random_inits = 3;
        let a = initial_tables(&config, 4, 2, 0.9);
        let b = initial_tables(&config, 4, 2, 0.9);
        assert_eq!(a, b);
        assert!(a.iter().all(|q| q.max_abs() <= 10.0));
        assert_ne!(a[0], a[1]);
        config.init_scale = 0.0;
        assert!(initial_tables(&config, 4, 2, 0.9)
            .iter()
            .all(|q| q.max_abs() == 0.0));
    }

    #[test]
    fn failed_check_aborts() {
        let mut art = RunArtifact::new(ExperimentConfig::new(ExperimentKind::Solve));
        assert!(art.verify("a", 1e-9, 1e-8, None).is_ok());
        let err = art.verify("b", 1e-3, 1e-8, Some((2, 1))).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert_eq!(art.checks.len(), 2);
        assert!(!art.checks[1].passed);
    }

    #[test]
    fn thresholds_use_mean_trace() {
        let mut config = ExperimentConfig::new(ExperimentKind::Solve);
        config.thresholds = vec![1.0, 0.1];
        let mut art = RunArtifact::new(config);
        art.push_runs(
            "x",
            vec![trace(vec![2.0, 1.0, 0.5]), trace(vec![2.0, 2.0, 0.5])],
        );
        assert_eq!(art.iterations("x", 1.0), Some(3));
        assert_eq!(art.iterations("x", 0.1), None);
    }
}
