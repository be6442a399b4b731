//! Dense tabular task model: dynamics, rewards, policies and the task tuple
//! `<S, A, p, r, gamma, beta, prior>`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-sum tolerance for transition rows and policy rows.
pub const STOCHASTIC_TOLERANCE: f64 = 1e-12;

fn check_counts(num_states: usize, num_actions: usize) -> Result<()> {
    if num_states == 0 || num_actions == 0 {
        return Err(Error::InvalidArgument(format!(
            "state and action counts must be positive (got {num_states} states, {num_actions} actions)"
        )));
    }
    Ok(())
}

fn check_len(what: &str, found: usize, expected: usize) -> Result<()> {
    if found != expected {
        return Err(Error::ShapeMismatch(format!(
            "{what}: expected {expected} entries, found {found}"
        )));
    }
    Ok(())
}

/// Transition kernel `p(s' | s, a)` stored densely as `[s][a][s']`.
///
/// The non-zero successors of every `(s, a)` are cached so that backups cost
/// `O(nnz)` rather than `O(|S|^2 |A|)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularDynamics {
    num_states: usize,
    num_actions: usize,
    probs: Vec<f64>,
    support: Vec<Vec<(usize, f64)>>,
}

impl TabularDynamics {
    /// Builds a kernel from a flat row-major `[s][a][s']` table.
    ///
    /// Values are stored as given; rows that are not distributions are left
    /// for [`validate_task`] to report.
    pub fn from_dense(num_states: usize, num_actions: usize, probs: Vec<f64>) -> Result<Self> {
        check_counts(num_states, num_actions)?;
        check_len(
            "transition",
            probs.len(),
            num_states * num_actions * num_states,
        )?;
        let support = probs
            .chunks(num_states)
            .map(|row| {
                row.iter()
                    .enumerate()
                    .filter(|(_, p)| **p != 0.0)
                    .map(|(j, p)| (j, *p))
                    .collect()
            })
            .collect();
        Ok(Self {
            num_states,
            num_actions,
            probs,
            support,
        })
    }

    pub fn from_nested(table: &[Vec<Vec<f64>>]) -> Result<Self> {
        let num_states = table.len();
        let num_actions = table.first().map_or(0, Vec::len);
        let mut flat = Vec::with_capacity(num_states * num_actions * num_states);
        for (s, per_action) in table.iter().enumerate() {
            if per_action.len() != num_actions {
                return Err(Error::ShapeMismatch(format!(
                    "transition[{s}] has {} actions, expected {num_actions}",
                    per_action.len()
                )));
            }
            for (a, row) in per_action.iter().enumerate() {
                if row.len() != num_states {
                    return Err(Error::ShapeMismatch(format!(
                        "transition[{s}][{a}] has {} successors, expected {num_states}",
                        row.len()
                    )));
                }
                flat.extend_from_slice(row);
            }
        }
        Self::from_dense(num_states, num_actions, flat)
    }

    pub fn from_fn(
        num_states: usize,
        num_actions: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut flat = Vec::with_capacity(num_states * num_actions * num_states);
        for s in 0..num_states {
            for a in 0..num_actions {
                for next in 0..num_states {
                    flat.push(f(s, a, next));
                }
            }
        }
        Self::from_dense(num_states, num_actions, flat)
    }

    /// Deterministic kernel where `(s, a)` always leads to `next(s, a)`.
    pub fn deterministic(
        num_states: usize,
        num_actions: usize,
        next: impl Fn(usize, usize) -> usize,
    ) -> Result<Self> {
        Self::from_fn(num_states, num_actions, |s, a, sp| {
            if next(s, a) == sp {
                1.0
            } else {
                0.0
            }
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    #[inline]
    pub fn prob(&self, s: usize, a: usize, next: usize) -> f64 {
        self.probs[(s * self.num_actions + a) * self.num_states + next]
    }

    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.num_actions + a) * self.num_states;
        &self.probs[start..start + self.num_states]
    }

    /// Successors with non-zero probability.
    #[inline]
    pub fn support(&self, s: usize, a: usize) -> &[(usize, f64)] {
        &self.support[s * self.num_actions + a]
    }

    /// `E_{s' ~ p(.|s,a)} values[s']`.
    #[inline]
    pub fn expectation(&self, s: usize, a: usize, values: &[f64]) -> f64 {
        self.support(s, a).iter().map(|&(j, p)| p * values[j]).sum()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    pub fn to_nested(&self) -> Vec<Vec<Vec<f64>>> {
        (0..self.num_states)
            .map(|s| {
                (0..self.num_actions)
                    .map(|a| self.row(s, a).to_vec())
                    .collect()
            })
            .collect()
    }

    pub fn is_deterministic(&self) -> bool {
        self.support
            .iter()
            .all(|row| row.len() == 1 && row[0].1 == 1.0)
    }

    pub(crate) fn ensure_same_shape(&self, other: &TabularDynamics) -> Result<()> {
        if self.num_states != other.num_states || self.num_actions != other.num_actions {
            return Err(Error::ShapeMismatch(format!(
                "dynamics {}x{} vs {}x{}",
                self.num_states, self.num_actions, other.num_states, other.num_actions
            )));
        }
        Ok(())
    }
}

/// Reward `r(s, a, s')` stored densely as `[s][a][s']`.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardTable {
    num_states: usize,
    num_actions: usize,
    values: Vec<f64>,
}

impl RewardTable {
    pub fn from_dense(num_states: usize, num_actions: usize, values: Vec<f64>) -> Result<Self> {
        check_counts(num_states, num_actions)?;
        check_len(
            "reward",
            values.len(),
            num_states * num_actions * num_states,
        )?;
        Ok(Self {
            num_states,
            num_actions,
            values,
        })
    }

    pub fn from_fn(
        num_states: usize,
        num_actions: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        check_counts(num_states, num_actions)?;
        let mut values = Vec::with_capacity(num_states * num_actions * num_states);
        for s in 0..num_states {
            for a in 0..num_actions {
                for next in 0..num_states {
                    values.push(f(s, a, next));
                }
            }
        }
        Self::from_dense(num_states, num_actions, values)
    }

    pub fn zeros(num_states: usize, num_actions: usize) -> Result<Self> {
        Self::from_fn(num_states, num_actions, |_, _, _| 0.0)
    }

    /// Broadcasts an `(s, a)` reward over successors.
    pub fn from_state_action(
        num_states: usize,
        num_actions: usize,
        per_pair: &[f64],
    ) -> Result<Self> {
        check_len(
            "state-action reward",
            per_pair.len(),
            num_states * num_actions,
        )?;
        Self::from_fn(num_states, num_actions, |s, a, _| {
            per_pair[s * num_actions + a]
        })
    }

    pub fn from_nested(table: &[Vec<Vec<f64>>]) -> Result<Self> {
        let num_states = table.len();
        let num_actions = table.first().map_or(0, Vec::len);
        let mut flat = Vec::with_capacity(num_states * num_actions * num_states);
        for (s, per_action) in table.iter().enumerate() {
            if per_action.len() != num_actions {
                return Err(Error::ShapeMismatch(format!("reward[{s}] action count")));
            }
            for (a, row) in per_action.iter().enumerate() {
                if row.len() != num_states {
                    return Err(Error::ShapeMismatch(format!(
                        "reward[{s}][{a}] successor count"
                    )));
                }
                flat.extend_from_slice(row);
            }
        }
        Self::from_dense(num_states, num_actions, flat)
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    #[inline]
    pub fn get(&self, s: usize, a: usize, next: usize) -> f64 {
        self.values[(s * self.num_actions + a) * self.num_states + next]
    }

    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.num_actions + a) * self.num_states;
        &self.values[start..start + self.num_states]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn to_nested(&self) -> Vec<Vec<Vec<f64>>> {
        (0..self.num_states)
            .map(|s| {
                (0..self.num_actions)
                    .map(|a| self.row(s, a).to_vec())
                    .collect()
            })
            .collect()
    }

    /// True when the reward does not depend on the successor state.
    pub fn is_state_action(&self) -> bool {
        self.values
            .chunks(self.num_states)
            .all(|row| row.iter().all(|v| *v == row[0]))
    }

    /// Cell-wise `self + scale * other`.
    pub fn add_scaled(&self, other: &RewardTable, scale: f64) -> Result<RewardTable> {
        self.ensure_same_shape(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| x + scale * y)
            .collect();
        RewardTable::from_dense(self.num_states, self.num_actions, values)
    }

    pub fn max_abs_diff(&self, other: &RewardTable) -> Result<f64> {
        self.ensure_same_shape(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max))
    }

    pub(crate) fn ensure_same_shape(&self, other: &RewardTable) -> Result<()> {
        if self.num_states != other.num_states || self.num_actions != other.num_actions {
            return Err(Error::ShapeMismatch(format!(
                "reward {}x{} vs {}x{}",
                self.num_states, self.num_actions, other.num_states, other.num_actions
            )));
        }
        Ok(())
    }
}

/// Stochastic policy `pi(a | s)` stored as `[s][a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable {
    num_states: usize,
    num_actions: usize,
    probs: Vec<f64>,
}

impl PolicyTable {
    pub fn from_dense(num_states: usize, num_actions: usize, probs: Vec<f64>) -> Result<Self> {
        check_counts(num_states, num_actions)?;
        check_len("policy", probs.len(), num_states * num_actions)?;
        Ok(Self {
            num_states,
            num_actions,
            probs,
        })
    }

    pub fn from_nested(rows: &[Vec<f64>]) -> Result<Self> {
        let num_states = rows.len();
        let num_actions = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != num_actions) {
            return Err(Error::ShapeMismatch("ragged policy rows".into()));
        }
        Self::from_dense(num_states, num_actions, rows.concat())
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    #[inline]
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.num_actions + a]
    }

    #[inline]
    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    pub fn to_nested(&self) -> Vec<Vec<f64>> {
        (0..self.num_states).map(|s| self.row(s).to_vec()).collect()
    }

    /// Largest per-entry absolute difference.
    pub fn max_abs_diff(&self, other: &PolicyTable) -> Result<f64> {
        if self.num_states != other.num_states || self.num_actions != other.num_actions {
            return Err(Error::ShapeMismatch("policy shapes differ".into()));
        }
        Ok(self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max))
    }

    /// Errors on the first entry that is not strictly positive.
    pub fn require_positive(&self) -> Result<()> {
        for s in 0..self.num_states {
            for a in 0..self.num_actions {
                let value = self.get(s, a);
                if !(value > 0.0) {
                    return Err(Error::NonPositivePolicy {
                        state: s,
                        action: a,
                        value,
                    });
                }
            }
        }
        Ok(())
    }

    /// Row-sum and sign violations of this table, independent of any task.
    pub fn violations(&self, require_positive: bool) -> Vec<Violation> {
        let mut out = Vec::new();
        for s in 0..self.num_states {
            let row = self.row(s);
            let sum: f64 = row.iter().sum();
            if !((sum - 1.0).abs() <= STOCHASTIC_TOLERANCE) {
                out.push(Violation::PolicyRowSum {
                    state: s,
                    sum,
                    deficit: 1.0 - sum,
                });
            }
            for (a, &p) in row.iter().enumerate() {
                let bad = if require_positive {
                    !(p > 0.0)
                } else {
                    !(p >= 0.0)
                };
                if bad {
                    out.push(Violation::PolicyNotPositive {
                        state: s,
                        action: a,
                        value: p,
                    });
                }
            }
        }
        out
    }
}

/// Uniform policy `1 / num_actions` in every state.
pub fn uniform_prior(num_states: usize, num_actions: usize) -> Result<PolicyTable> {
    check_counts(num_states, num_actions)?;
    PolicyTable::from_dense(
        num_states,
        num_actions,
        vec![1.0 / num_actions as f64; num_states * num_actions],
    )
}

/// An entropy-regularized task `<S, A, p, r, gamma, beta, prior>`.
///
/// Fields are public so diagnostic tooling can inspect malformed tasks;
/// [`Task::new`] is the validating constructor.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub dynamics: TabularDynamics,
    pub reward: RewardTable,
    pub gamma: f64,
    pub beta: f64,
    pub prior: PolicyTable,
}

impl Task {
    pub fn new(
        dynamics: TabularDynamics,
        reward: RewardTable,
        gamma: f64,
        beta: f64,
        prior: PolicyTable,
    ) -> Result<Self> {
        let task = Self {
            dynamics,
            reward,
            gamma,
            beta,
            prior,
        };
        let report = validate_task(&task);
        if report.is_valid() {
            Ok(task)
        } else {
            Err(Error::InvalidTask(report))
        }
    }

    pub fn num_states(&self) -> usize {
        self.dynamics.num_states()
    }

    pub fn num_actions(&self) -> usize {
        self.dynamics.num_actions()
    }

    pub fn with_reward(&self, reward: RewardTable) -> Result<Task> {
        Task::new(
            self.dynamics.clone(),
            reward,
            self.gamma,
            self.beta,
            self.prior.clone(),
        )
    }

    pub fn with_dynamics(&self, dynamics: TabularDynamics) -> Result<Task> {
        Task::new(
            dynamics,
            self.reward.clone(),
            self.gamma,
            self.beta,
            self.prior.clone(),
        )
    }

    pub fn with_prior(&self, prior: PolicyTable) -> Result<Task> {
        Task::new(
            self.dynamics.clone(),
            self.reward.clone(),
            self.gamma,
            self.beta,
            prior,
        )
    }

    /// `E_{s'} r(s, a, s')` for every pair, row-major.
    pub fn expected_rewards(&self) -> Vec<f64> {
        let (ns, na) = (self.num_states(), self.num_actions());
        let mut out = Vec::with_capacity(ns * na);
        for s in 0..ns {
            for a in 0..na {
                let row = self.reward.row(s, a);
                out.push(self.dynamics.expectation(s, a, row));
            }
        }
        out
    }

    /// Whether `other` differs from `self` at most in its reward table.
    pub fn is_reward_varying_with(&self, other: &Task) -> bool {
        self.dynamics == other.dynamics
            && self.gamma == other.gamma
            && self.beta == other.beta
            && self.prior == other.prior
            && self.reward.num_states() == other.reward.num_states()
            && self.reward.num_actions() == other.reward.num_actions()
    }

    pub fn to_document(&self) -> TaskDocument {
        TaskDocument {
            num_states: self.num_states(),
            num_actions: self.num_actions(),
            gamma: self.gamma,
            beta: self.beta,
            prior: self.prior.to_nested(),
            transition: self.dynamics.to_nested(),
            reward: RewardArray::Full(self.reward.to_nested()),
            reward_rank: None,
        }
    }

    pub fn from_document(doc: &TaskDocument) -> Result<Task> {
        let dynamics = TabularDynamics::from_nested(&doc.transition)?;
        if dynamics.num_states() != doc.num_states || dynamics.num_actions() != doc.num_actions {
            return Err(Error::ShapeMismatch(format!(
                "transition is {}x{}, header says {}x{}",
                dynamics.num_states(),
                dynamics.num_actions(),
                doc.num_states,
                doc.num_actions
            )));
        }
        let reward = match (&doc.reward, doc.reward_rank) {
            (RewardArray::Full(table), None | Some(3)) => RewardTable::from_nested(table)?,
            (RewardArray::PerPair(rows), None | Some(2)) => {
                let prior_like = PolicyTable::from_nested(rows)?;
                RewardTable::from_state_action(
                    prior_like.num_states(),
                    prior_like.num_actions(),
                    prior_like.as_slice(),
                )?
            }
            (_, Some(rank)) => {
                return Err(Error::ShapeMismatch(format!(
                    "reward_rank {rank} does not match the reward array"
                )))
            }
        };
        let prior = PolicyTable::from_nested(&doc.prior)?;
        Task::new(dynamics, reward, doc.gamma, doc.beta, prior)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn from_json(text: &str) -> Result<Task> {
        let doc: TaskDocument = serde_json::from_str(text)?;
        Task::from_document(&doc)
    }
}

/// JSON form of a [`Task`].
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TaskDocument {
    pub num_states: usize,
    pub num_actions: usize,
    pub gamma: f64,
    pub beta: f64,
    pub prior: Vec<Vec<f64>>,
    pub transition: Vec<Vec<Vec<f64>>>,
    pub reward: RewardArray,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward_rank: Option<u8>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum RewardArray {
    Full(Vec<Vec<Vec<f64>>>),
    PerPair(Vec<Vec<f64>>),
}

/// One failed invariant, with its location and magnitude.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    ShapeMismatch {
        component: &'static str,
        detail: String,
    },
    TransitionRowSum {
        state: usize,
        action: usize,
        sum: f64,
        deficit: f64,
    },
    InvalidProbability {
        state: usize,
        action: usize,
        next_state: usize,
        value: f64,
    },
    NonFiniteReward {
        state: usize,
        action: usize,
        next_state: usize,
        value: f64,
    },
    PolicyRowSum {
        state: usize,
        sum: f64,
        deficit: f64,
    },
    PolicyNotPositive {
        state: usize,
        action: usize,
        value: f64,
    },
    Gamma(f64),
    Beta(f64),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::ShapeMismatch { component, detail } => {
                write!(f, "{component}: shape mismatch ({detail})")
            }
            Violation::TransitionRowSum {
                state,
                action,
                sum,
                deficit,
            } => write!(
                f,
                "transition row ({state}, {action}) sums to {sum} (deficit {deficit:e})"
            ),
            Violation::InvalidProbability {
                state,
                action,
                next_state,
                value,
            } => write!(
                f,
                "transition ({state}, {action}, {next_state}) has invalid probability {value}"
            ),
            Violation::NonFiniteReward {
                state,
                action,
                next_state,
                value,
            } => write!(f, "reward ({state}, {action}, {next_state}) is {value}"),
            Violation::PolicyRowSum {
                state,
                sum,
                deficit,
            } => write!(f, "prior row {state} sums to {sum} (deficit {deficit:e})"),
            Violation::PolicyNotPositive {
                state,
                action,
                value,
            } => write!(
                f,
                "prior ({state}, {action}) = {value} is not strictly positive"
            ),
            Violation::Gamma(g) => write!(f, "gamma {g} is not in (0, 1)"),
            Violation::Beta(b) => write!(f, "beta {b} is not a positive finite number"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn len(&self) -> usize {
        self.violations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "  - {v}")?;
        }
        Ok(())
    }
}

/// Checks every task invariant and reports all violations found.
pub fn validate_task(task: &Task) -> ValidationReport {
    let mut violations = Vec::new();
    let (ns, na) = (task.dynamics.num_states(), task.dynamics.num_actions());

    if !(task.gamma > 0.0 && task.gamma < 1.0) {
        violations.push(Violation::Gamma(task.gamma));
    }
    if !(task.beta > 0.0 && task.beta.is_finite()) {
        violations.push(Violation::Beta(task.beta));
    }

    for s in 0..ns {
        for a in 0..na {
            let row = task.dynamics.row(s, a);
            for (next, &p) in row.iter().enumerate() {
                if !(p >= 0.0 && p <= 1.0 + STOCHASTIC_TOLERANCE) {
                    violations.push(Violation::InvalidProbability {
                        state: s,
                        action: a,
                        next_state: next,
                        value: p,
                    });
                }
            }
            let sum: f64 = row.iter().sum();
            if !((sum - 1.0).abs() <= STOCHASTIC_TOLERANCE) {
                violations.push(Violation::TransitionRowSum {
                    state: s,
                    action: a,
                    sum,
                    deficit: 1.0 - sum,
                });
            }
        }
    }

    if task.reward.num_states() != ns || task.reward.num_actions() != na {
        violations.push(Violation::ShapeMismatch {
            component: "reward",
            detail: format!(
                "{}x{} vs dynamics {ns}x{na}",
                task.reward.num_states(),
                task.reward.num_actions()
            ),
        });
    } else {
        for s in 0..ns {
            for a in 0..na {
                for (next, &r) in task.reward.row(s, a).iter().enumerate() {
                    if !r.is_finite() {
                        violations.push(Violation::NonFiniteReward {
                            state: s,
                            action: a,
                            next_state: next,
                            value: r,
                        });
                    }
                }
            }
        }
    }

    if task.prior.num_states() != ns || task.prior.num_actions() != na {
        violations.push(Violation::ShapeMismatch {
            component: "prior",
            detail: format!(
                "{}x{} vs dynamics {ns}x{na}",
                task.prior.num_states(),
                task.prior.num_actions()
            ),
        });
    } else {
        violations.extend(task.prior.violations(true));
    }

    ValidationReport { violations }
}

/// `sum_{s'} p(s' | s, a) r(s, a, s')`.
pub fn expected_reward(task: &Task, s: usize, a: usize) -> Result<f64> {
    if s >= task.num_states() {
        return Err(Error::IndexOutOfRange {
            what: "state",
            index: s,
            bound: task.num_states(),
        });
    }
    if a >= task.num_actions() {
        return Err(Error::IndexOutOfRange {
            what: "action",
            index: a,
            bound: task.num_actions(),
        });
    }
    Ok(task.dynamics.expectation(s, a, task.reward.row(s, a)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state_task() -> Task {
        let p = TabularDynamics::from_nested(&[
            vec![vec![0.5, 0.5], vec![0.0, 1.0]],
            vec![vec![1.0, 0.0], vec![0.25, 0.75]],
        ])
        .unwrap();
        let r = RewardTable::from_fn(2, 2, |s, a, n| (s + 2 * a + 3 * n) as f64 * 0.1).unwrap();
        Task::new(p, r, 0.9, 1.0, uniform_prior(2, 2).unwrap()).unwrap()
    }

    #[test]
    fn uniform_prior_examples() {
        assert_eq!(
            uniform_prior(1, 2).unwrap().to_nested(),
            vec![vec![0.5, 0.5]]
        );
        assert!(uniform_prior(2, 4)
            .unwrap()
            .as_slice()
            .iter()
            .all(|p| *p == 0.25));
        assert!(uniform_prior(3, 1)
            .unwrap()
            .as_slice()
            .iter()
            .all(|p| *p == 1.0));
        assert!(uniform_prior(0, 2).is_err());
        assert!(uniform_prior(2, 0).is_err());
    }

    #[test]
    fn valid_two_state_task_has_empty_report() {
        assert!(validate_task(&two_state_task()).is_valid());
    }

    #[test]
    fn short_row_reports_deficit() {
        let mut task = two_state_task();
        task.dynamics = TabularDynamics::from_nested(&[
            vec![vec![0.5, 0.5], vec![0.0, 1.0]],
            vec![vec![0.9, 0.0], vec![0.25, 0.75]],
        ])
        .unwrap();
        let report = validate_task(&task);
        assert_eq!(report.len(), 1);
        match &report.violations[0] {
            Violation::TransitionRowSum {
                state,
                action,
                deficit,
                ..
            } => {
                assert_eq!((*state, *action), (1, 0));
                assert!((deficit - 0.1).abs() < 1e-15);
            }
            other => panic!("unexpected violation {other:?}"),
        }
    }

    #[test]
    fn zero_prior_entry_is_a_positivity_violation() {
        let mut task = two_state_task();
        task.prior = PolicyTable::from_nested(&[vec![0.5, 0.5], vec![1.0, 0.0]]).unwrap();
        let report = validate_task(&task);
        assert_eq!(
            report.violations,
            vec![Violation::PolicyNotPositive {
                state: 1,
                action: 1,
                value: 0.0
            }]
        );
        assert!(matches!(
            Task::new(task.dynamics, task.reward, 0.9, 1.0, task.prior),
            Err(Error::InvalidTask(_))
        ));
    }

    #[test]
    fn gamma_and_beta_ranges() {
        let mut task = two_state_task();
        task.gamma = 1.0;
        task.beta = 0.0;
        let report = validate_task(&task);
        assert_eq!(
            report.violations,
            vec![Violation::Gamma(1.0), Violation::Beta(0.0)]
        );
    }

    #[test]
    fn near_stochastic_rows_are_accepted() {
        let p = TabularDynamics::from_dense(1, 1, vec![1.0 + 5e-13]).unwrap();
        let task = Task::new(
            p,
            RewardTable::zeros(1, 1).unwrap(),
            0.5,
            1.0,
            uniform_prior(1, 1).unwrap(),
        );
        assert!(task.is_ok());
    }

    #[test]
    fn expected_reward_examples() {
        let p = TabularDynamics::deterministic(1, 1, |_, _| 0).unwrap();
        let r = RewardTable::from_dense(1, 1, vec![1.0]).unwrap();
        let task = Task::new(p, r, 0.5, 1.0, uniform_prior(1, 1).unwrap()).unwrap();
        assert_eq!(expected_reward(&task, 0, 0).unwrap(), 1.0);

        let p =
            TabularDynamics::from_nested(&[vec![vec![0.5, 0.5]], vec![vec![0.0, 1.0]]]).unwrap();
        let r = RewardTable::from_fn(2, 1, |_, _, n| if n == 0 { 2.0 } else { 0.0 }).unwrap();
        let task = Task::new(p, r, 0.5, 1.0, uniform_prior(2, 1).unwrap()).unwrap();
        assert_eq!(expected_reward(&task, 0, 0).unwrap(), 1.0);
        assert!(matches!(
            expected_reward(&task, 2, 0),
            Err(Error::IndexOutOfRange { what: "state", .. })
        ));
        assert!(matches!(
            expected_reward(&task, 0, 1),
            Err(Error::IndexOutOfRange { what: "action", .. })
        ));
    }

    #[test]
    fn state_action_reward_document_is_broadcast() {
        let text = r#"{
            "num_states": 2, "num_actions": 2, "gamma": 0.5, "beta": 1.0,
            "prior": [[0.5, 0.5], [0.5, 0.5]],
            "transition": [[[1, 0], [0, 1]], [[1, 0], [0, 1]]],
            "reward": [[1.0, 2.0], [3.0, 4.0]],
            "reward_rank": 2
        }"#;
        let task = Task::from_json(text).unwrap();
        assert_eq!(task.reward.row(1, 0), &[3.0, 3.0]);
        assert!(task.reward.is_state_action());
    }

    #[test]
    fn mismatched_reward_rank_is_rejected() {
        let text = r#"{
            "num_states": 1, "num_actions": 1, "gamma": 0.5, "beta": 1.0,
            "prior": [[1.0]], "transition": [[[1.0]]], "reward": [[[1.0]]], "reward_rank": 2
        }"#;
        assert!(matches!(
            Task::from_json(text),
            Err(Error::ShapeMismatch(_))
        ));
    }
}
