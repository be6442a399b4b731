//! Soft value iteration, soft policy evaluation and policy/value extraction.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::mdp::{PolicyTable, Task, STOCHASTIC_TOLERANCE};

pub const DEFAULT_TOLERANCE: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 100_000;

/// Action-value table `Q(s, a)`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    num_states: usize,
    num_actions: usize,
    values: Vec<f64>,
}

/// State-indexed values such as `V(s)` or a potential.
pub type StateValues = Vec<f64>;

impl QTable {
    pub fn zeros(num_states: usize, num_actions: usize) -> Self {
        Self {
            num_states,
            num_actions,
            values: vec![0.0; num_states * num_actions],
        }
    }

    pub fn from_dense(num_states: usize, num_actions: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != num_states * num_actions {
            return Err(Error::ShapeMismatch(format!(
                "q-table: expected {} entries, found {}",
                num_states * num_actions,
                values.len()
            )));
        }
        Ok(Self {
            num_states,
            num_actions,
            values,
        })
    }

    pub fn from_fn(
        num_states: usize,
        num_actions: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Self {
        let mut values = Vec::with_capacity(num_states * num_actions);
        for s in 0..num_states {
            for a in 0..num_actions {
                values.push(f(s, a));
            }
        }
        Self {
            num_states,
            num_actions,
            values,
        }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    #[inline]
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.num_actions + a]
    }

    #[inline]
    pub fn set(&mut self, s: usize, a: usize, value: f64) {
        self.values[s * self.num_actions + a] = value;
    }

    #[inline]
    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn to_nested(&self) -> Vec<Vec<f64>> {
        (0..self.num_states).map(|s| self.row(s).to_vec()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &QTable) -> bool {
        self.num_states == other.num_states && self.num_actions == other.num_actions
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Sup-norm distance; errors on shape mismatch.
    pub fn max_abs_diff(&self, other: &QTable) -> Result<f64> {
        bellman_error(self, other)
    }

    /// Cell-wise `self + scale * other`.
    pub fn add_scaled(&self, other: &QTable, scale: f64) -> Result<QTable> {
        if !self.same_shape(other) {
            return Err(Error::ShapeMismatch("q-table shapes differ".into()));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| x + scale * y)
            .collect();
        QTable::from_dense(self.num_states, self.num_actions, values)
    }

    /// Adds `scale * per_state[s]` to every action of state `s`.
    pub fn add_state_values(&self, per_state: &[f64], scale: f64) -> Result<QTable> {
        if per_state.len() != self.num_states {
            return Err(Error::ShapeMismatch(format!(
                "state table has {} entries, q-table has {} states",
                per_state.len(),
                self.num_states
            )));
        }
        Ok(QTable::from_fn(
            self.num_states,
            self.num_actions,
            |s, a| self.get(s, a) + scale * per_state[s],
        ))
    }
}

/// Stopping rule shared by [`solve`] and [`soft_policy_evaluation`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tolerance: DEFAULT_TOLERANCE,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

impl SolveOptions {
    pub fn with_tolerance(tolerance: f64) -> Self {
        Self {
            tolerance,
            ..Self::default()
        }
    }

    fn check(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

/// Sup-norm successive differences `max |Q^(k+1) - Q^(k)|`, one per sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceTrace {
    pub errors: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub tolerance: f64,
}

impl ConvergenceTrace {
    /// A trace with no sweeps, used for solutions assembled from identities.
    pub fn assembled(tolerance: f64) -> Self {
        Self {
            errors: Vec::new(),
            iterations: 0,
            converged: true,
            tolerance,
        }
    }

    /// Number of sweeps until the error first drops to `threshold` or below.
    pub fn iterations_to(&self, threshold: f64) -> Option<usize> {
        iterations_to_threshold(&self.errors, threshold)
    }

    /// `iteration,error` CSV with one row per sweep.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,error\n");
        for (k, e) in self.errors.iter().enumerate() {
            let _ = writeln!(out, "{},{:e}", k + 1, e);
        }
        out
    }
}

/// First 1-based sweep index whose error is `<= threshold`.
pub fn iterations_to_threshold(errors: &[f64], threshold: f64) -> Option<usize> {
    errors.iter().position(|e| *e <= threshold).map(|k| k + 1)
}

/// Optimal (or assembled) solution of a task.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftSolution {
    pub q: QTable,
    pub v: StateValues,
    pub policy: PolicyTable,
    pub trace: ConvergenceTrace,
}

impl SoftSolution {
    /// Derives `V` and `pi` from `q` under `prior`.
    pub fn from_q(
        q: QTable,
        prior: &PolicyTable,
        beta: f64,
        trace: ConvergenceTrace,
    ) -> Result<Self> {
        let v = extract_value(&q, prior, beta)?;
        let policy = extract_policy(&q, prior, beta)?;
        Ok(Self {
            q,
            v,
            policy,
            trace,
        })
    }
}

/// `(1/beta) log sum_a w_a exp(beta x_a)`, shifted by the running maximum.
#[inline]
pub fn soft_value(x: &[f64], weights: &[f64], beta: f64) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for (xi, wi) in x.iter().zip(weights) {
        if *wi > 0.0 && *xi > max {
            max = *xi;
        }
    }
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = x
        .iter()
        .zip(weights)
        .filter(|(_, w)| **w > 0.0)
        .map(|(xi, wi)| wi * (beta * (xi - max)).exp())
        .sum();
    max + sum.ln() / beta
}

fn check_q_shape(q: &QTable, task: &Task) -> Result<()> {
    if q.num_states != task.num_states() || q.num_actions != task.num_actions() {
        return Err(Error::ShapeMismatch(format!(
            "q-table {}x{} vs task {}x{}",
            q.num_states,
            q.num_actions,
            task.num_states(),
            task.num_actions()
        )));
    }
    Ok(())
}

fn check_prior_shape(q: &QTable, prior: &PolicyTable) -> Result<()> {
    if q.num_states != prior.num_states() || q.num_actions != prior.num_actions() {
        return Err(Error::ShapeMismatch(format!(
            "q-table {}x{} vs prior {}x{}",
            q.num_states,
            q.num_actions,
            prior.num_states(),
            prior.num_actions()
        )));
    }
    Ok(())
}

/// Precomputed pieces of the soft Bellman operator for one task.
struct SoftOperator<'a> {
    task: &'a Task,
    expected_reward: Vec<f64>,
    next_value: Vec<f64>,
}

impl<'a> SoftOperator<'a> {
    fn new(task: &'a Task) -> Self {
        Self {
            task,
            expected_reward: task.expected_rewards(),
            next_value: vec![0.0; task.num_states()],
        }
    }

    /// `out = B q`. `next_value` must already hold the successor values.
    fn apply_with_values(&self, out: &mut [f64]) -> Result<()> {
        let na = self.task.num_actions();
        let gamma = self.task.gamma;
        for s in 0..self.task.num_states() {
            for a in 0..na {
                let idx = s * na + a;
                let cont = self.task.dynamics.expectation(s, a, &self.next_value);
                let value = self.expected_reward[idx] + gamma * cont;
                if !value.is_finite() {
                    return Err(Error::NumericFailure {
                        state: s,
                        action: a,
                    });
                }
                out[idx] = value;
            }
        }
        Ok(())
    }

    fn apply(&mut self, q: &[f64], out: &mut [f64]) -> Result<()> {
        let na = self.task.num_actions();
        for s in 0..self.task.num_states() {
            self.next_value[s] = soft_value(
                &q[s * na..(s + 1) * na],
                self.task.prior.row(s),
                self.task.beta,
            );
        }
        self.apply_with_values(out)
    }
}

/// One soft Bellman backup:
/// `Q'(s,a) = E_{s'}[ r(s,a,s') + (gamma/beta) log E_{a'~prior} exp(beta q(s',a')) ]`.
pub fn soft_backup(q: &QTable, task: &Task) -> Result<QTable> {
    check_q_shape(q, task)?;
    let mut op = SoftOperator::new(task);
    let mut out = QTable::zeros(q.num_states, q.num_actions);
    op.apply(&q.values, &mut out.values)?;
    Ok(out)
}

/// Largest Bellman residual `|B q - q|` and where it occurs.
pub fn bellman_residual(q: &QTable, task: &Task) -> Result<(f64, usize, usize)> {
    let next = soft_backup(q, task)?;
    let na = q.num_actions.max(1);
    let mut worst = (0.0, 0, 0);
    for (i, (x, y)) in q.values.iter().zip(&next.values).enumerate() {
        let d = (x - y).abs();
        if d > worst.0 {
            worst = (d, i / na, i % na);
        }
    }
    Ok(worst)
}

/// Soft value iteration from `q0` (zeros when absent) until the successive
/// sup-norm difference is at most `options.tolerance`.
pub fn solve(task: &Task, options: &SolveOptions, q0: Option<&QTable>) -> Result<SoftSolution> {
    options.check()?;
    let mut current = match q0 {
        Some(q) => {
            check_q_shape(q, task)?;
            if !q.is_finite() {
                return Err(Error::InvalidArgument(
                    "initial q-table is not finite".into(),
                ));
            }
            q.clone()
        }
        None => QTable::zeros(task.num_states(), task.num_actions()),
    };
    let mut next = QTable::zeros(task.num_states(), task.num_actions());
    let mut op = SoftOperator::new(task);
    let mut errors = Vec::new();
    let mut converged = false;

    for _ in 0..options.max_iter {
        op.apply(&current.values, &mut next.values)?;
        let err = sup_diff(&current.values, &next.values);
        std::mem::swap(&mut current, &mut next);
        errors.push(err);
        if err <= options.tolerance {
            converged = true;
            break;
        }
    }

    let trace = ConvergenceTrace {
        iterations: errors.len(),
        errors,
        converged,
        tolerance: options.tolerance,
    };
    SoftSolution::from_q(current, &task.prior, task.beta, trace)
}

#[inline]
fn sup_diff(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
}

/// Result of evaluating a fixed policy.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyEvaluation {
    pub q: QTable,
    /// `V^pi(s) = E_{a~pi}[Q^pi(s,a) - (1/beta) log(pi/prior)]`.
    pub v: StateValues,
    pub trace: ConvergenceTrace,
}

impl PolicyEvaluation {
    pub fn converged(&self) -> bool {
        self.trace.converged
    }
}

/// Per-state `-(1/beta) KL(pi(.|s) || prior(.|s))`.
fn kl_penalties(policy: &PolicyTable, prior: &PolicyTable, beta: f64) -> Vec<f64> {
    (0..policy.num_states())
        .map(|s| {
            -policy
                .row(s)
                .iter()
                .zip(prior.row(s))
                .filter(|(p, _)| **p > 0.0)
                .map(|(p, p0)| p * (p / p0).ln())
                .sum::<f64>()
                / beta
        })
        .collect()
}

fn policy_state_values(q: &[f64], policy: &PolicyTable, penalties: &[f64], out: &mut [f64]) {
    let na = policy.num_actions();
    for (s, v) in out.iter_mut().enumerate() {
        let row = policy.row(s);
        *v = penalties[s]
            + row
                .iter()
                .zip(&q[s * na..(s + 1) * na])
                .map(|(p, x)| p * x)
                .sum::<f64>();
    }
}

/// Fixed point of
/// `Q(s,a) = E_{s'}[ r + gamma E_{a'~pi}( Q(s',a') - (1/beta) log(pi(a'|s')/prior(a'|s')) ) ]`.
pub fn soft_policy_evaluation(
    task: &Task,
    policy: &PolicyTable,
    options: &SolveOptions,
) -> Result<PolicyEvaluation> {
    options.check()?;
    if policy.num_states() != task.num_states() || policy.num_actions() != task.num_actions() {
        return Err(Error::ShapeMismatch("policy does not match task".into()));
    }
    if let Some(v) = policy.violations(false).into_iter().next() {
        return Err(Error::InvalidArgument(format!(
            "policy is not a distribution: {v}"
        )));
    }
    for s in 0..task.num_states() {
        for a in 0..task.num_actions() {
            if policy.get(s, a) > 0.0 && !(task.prior.get(s, a) > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "policy is not absolutely continuous w.r.t. the prior at ({s}, {a})"
                )));
            }
        }
    }

    let penalties = kl_penalties(policy, &task.prior, task.beta);
    let mut op = SoftOperator::new(task);
    let (ns, na) = (task.num_states(), task.num_actions());
    let mut current = QTable::zeros(ns, na);
    let mut next = QTable::zeros(ns, na);
    let mut errors = Vec::new();
    let mut converged = false;

    for _ in 0..options.max_iter {
        policy_state_values(&current.values, policy, &penalties, &mut op.next_value);
        op.apply_with_values(&mut next.values)?;
        let err = sup_diff(&current.values, &next.values);
        std::mem::swap(&mut current, &mut next);
        errors.push(err);
        if err <= options.tolerance {
            converged = true;
            break;
        }
    }

    let mut v = vec![0.0; ns];
    policy_state_values(&current.values, policy, &penalties, &mut v);
    Ok(PolicyEvaluation {
        q: current,
        v,
        trace: ConvergenceTrace {
            iterations: errors.len(),
            errors,
            converged,
            tolerance: options.tolerance,
        },
    })
}

/// `max_{s,a} |q_next - q_prev|`.
pub fn bellman_error(q_prev: &QTable, q_next: &QTable) -> Result<f64> {
    if !q_prev.same_shape(q_next) {
        return Err(Error::ShapeMismatch(format!(
            "q-tables {}x{} and {}x{}",
            q_prev.num_states, q_prev.num_actions, q_next.num_states, q_next.num_actions
        )));
    }
    Ok(sup_diff(&q_prev.values, &q_next.values))
}

/// `pi(a|s) = prior(a|s) exp(beta q(s,a)) / sum_a' prior(a'|s) exp(beta q(s,a'))`.
pub fn extract_policy(q: &QTable, prior: &PolicyTable, beta: f64) -> Result<PolicyTable> {
    check_prior_shape(q, prior)?;
    let na = q.num_actions;
    let mut probs = vec![0.0; q.values.len()];
    for s in 0..q.num_states {
        let row = q.row(s);
        let v = soft_value(row, prior.row(s), beta);
        if !v.is_finite() {
            return Err(Error::NumericFailure {
                state: s,
                action: 0,
            });
        }
        let out = &mut probs[s * na..(s + 1) * na];
        for a in 0..na {
            let w = prior.get(s, a);
            out[a] = if w > 0.0 {
                w * (beta * (row[a] - v)).exp()
            } else {
                0.0
            };
            if !out[a].is_finite() {
                return Err(Error::NumericFailure {
                    state: s,
                    action: a,
                });
            }
        }
        // exp(beta (q - v)) already normalises up to rounding; fold the remainder in
        let sum: f64 = out.iter().sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOLERANCE * 0.5 {
            out.iter_mut().for_each(|p| *p /= sum);
        }
    }
    PolicyTable::from_dense(q.num_states, na, probs)
}

/// `V(s) = (1/beta) log sum_a prior(a|s) exp(beta q(s,a))`.
pub fn extract_value(q: &QTable, prior: &PolicyTable, beta: f64) -> Result<StateValues> {
    check_prior_shape(q, prior)?;
    (0..q.num_states)
        .map(|s| {
            let v = soft_value(q.row(s), prior.row(s), beta);
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::NumericFailure {
                    state: s,
                    action: 0,
                })
            }
        })
        .collect()
}
