//! Corrective value functions.
//!
//! Every constructor here returns a [`CorrectiveProblem`]: an ordinary task
//! whose optimal action-value function `K*` satisfies
//! `Q_target* = base_q + K*`, with `V_target* = base_v + V_K*` and the target
//! policy equal to the corrective task's optimal policy. The corrective task
//! uses a designated prior (the base optimal policy, or the composed policy
//! `pi_f`) instead of the original prior.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{PolicyTable, RewardTable, TabularDynamics, Task};
use crate::solver::{
    bellman_residual, extract_policy, extract_value, soft_value, ConvergenceTrace, QTable,
    SoftSolution, SolveOptions, StateValues,
};

/// Tolerance for the algebraic `V` and policy identities checked in [`combine`].
pub const IDENTITY_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    RewardChange,
    DynamicsChange,
    RewardAndDynamicsChange,
    Composition,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectiveProblem {
    /// Task with reward `kappa` and the designated prior.
    pub task: Task,
    /// Quantity added to `K*` to recover the target's `Q*`.
    pub base_q: QTable,
    /// Soft value of `base_q` under `original_prior`.
    pub base_v: StateValues,
    /// Prior of the target task.
    pub original_prior: PolicyTable,
    pub provenance: Provenance,
}

impl CorrectiveProblem {
    /// Zeroth iterate of the corrective recursion, i.e. `base_q + 0`.
    pub fn zero_shot(&self) -> &QTable {
        &self.base_q
    }

    /// `(1/beta) log E_{a~original prior} exp(beta (base_q + k))(s) - base_v(s)`,
    /// which equals the soft value of `k` under the corrective prior.
    fn corrected_next_values(&self, k: &QTable) -> Vec<f64> {
        let na = k.num_actions();
        let beta = self.task.beta;
        let mut shifted = vec![0.0; na];
        (0..k.num_states())
            .map(|s| {
                for (a, slot) in shifted.iter_mut().enumerate() {
                    *slot = self.base_q.get(s, a) + k.get(s, a);
                }
                soft_value(&shifted, self.original_prior.row(s), beta) - self.base_v[s]
            })
            .collect()
    }

    /// `log prior_K(a|s) = log pi0(a|s) + beta (base_q(s,a) - base_v(s))`,
    /// exact even where the corrective prior underflows.
    pub fn log_prior(&self) -> QTable {
        let beta = self.task.beta;
        QTable::from_fn(
            self.base_q.num_states(),
            self.base_q.num_actions(),
            |s, a| {
                self.original_prior.get(s, a).ln() + beta * (self.base_q.get(s, a) - self.base_v[s])
            },
        )
    }

    fn backup_with(&self, k: &QTable, expected_kappa: &[f64], out: &mut QTable) -> Result<()> {
        let w = self.corrected_next_values(k);
        let (ns, na) = (k.num_states(), k.num_actions());
        let gamma = self.task.gamma;
        for s in 0..ns {
            for a in 0..na {
                let value =
                    expected_kappa[s * na + a] + gamma * self.task.dynamics.expectation(s, a, &w);
                if !value.is_finite() {
                    return Err(Error::NumericFailure {
                        state: s,
                        action: a,
                    });
                }
                out.set(s, a, value);
            }
        }
        Ok(())
    }

    fn check_k(&self, k: &QTable) -> Result<()> {
        if !k.same_shape(&self.base_q) {
            return Err(Error::ShapeMismatch(
                "corrective table does not match base".into(),
            ));
        }
        Ok(())
    }

    /// Soft backup of the corrective task. The bootstrap uses the original
    /// prior on `base_q + k`, so the result does not depend on how finely
    /// the corrective prior is represented.
    pub fn backup(&self, k: &QTable) -> Result<QTable> {
        self.check_k(k)?;
        let mut out = QTable::zeros(k.num_states(), k.num_actions());
        self.backup_with(k, &self.task.expected_rewards(), &mut out)?;
        Ok(out)
    }

    /// Largest `|backup(k) - k|` and where it occurs.
    pub fn residual(&self, k: &QTable) -> Result<(f64, usize, usize)> {
        let next = self.backup(k)?;
        let mut worst = (0.0, 0, 0);
        for s in 0..k.num_states() {
            for a in 0..k.num_actions() {
                let d = (next.get(s, a) - k.get(s, a)).abs();
                if d > worst.0 {
                    worst = (d, s, a);
                }
            }
        }
        Ok(worst)
    }

    /// Value iteration on the corrective task from `k0` (zeros when absent).
    ///
    /// The returned solution holds `K*`, `V_K` and `pi_K`.
    pub fn solve(&self, options: &SolveOptions, k0: Option<&QTable>) -> Result<SoftSolution> {
        let (ns, na) = (self.base_q.num_states(), self.base_q.num_actions());
        let mut current = match k0 {
            Some(k) => {
                self.check_k(k)?;
                k.clone()
            }
            None => QTable::zeros(ns, na),
        };
        if !(options.tolerance > 0.0) || options.max_iter == 0 {
            return Err(Error::InvalidArgument(
                "tolerance must be positive and max_iter nonzero".into(),
            ));
        }
        let expected_kappa = self.task.expected_rewards();
        let mut next = QTable::zeros(ns, na);
        let mut errors = Vec::new();
        let mut converged = false;
        for _ in 0..options.max_iter {
            self.backup_with(&current, &expected_kappa, &mut next)?;
            let err = next.max_abs_diff(&current)?;
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
        let (v, policy) = self.value_and_policy(&current)?;
        Ok(SoftSolution {
            q: current,
            v,
            policy,
            trace,
        })
    }

    /// `V_K` and `pi_K` computed from the log corrective prior.
    pub fn value_and_policy(&self, k: &QTable) -> Result<(StateValues, PolicyTable)> {
        self.check_k(k)?;
        let beta = self.task.beta;
        let log_prior = self.log_prior();
        let (ns, na) = (k.num_states(), k.num_actions());
        let mut v = Vec::with_capacity(ns);
        let mut probs = Vec::with_capacity(ns * na);
        let mut logits = vec![0.0; na];
        for s in 0..ns {
            for (a, slot) in logits.iter_mut().enumerate() {
                *slot = log_prior.get(s, a) + beta * k.get(s, a);
            }
            let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|x| (x - m).exp()).sum();
            let log_z = m + z.ln();
            if !log_z.is_finite() {
                return Err(Error::NumericFailure {
                    state: s,
                    action: 0,
                });
            }
            v.push(log_z / beta);
            probs.extend(logits.iter().map(|x| (x - log_z).exp()));
        }
        Ok((v, PolicyTable::from_dense(ns, na, probs)?))
    }
}

/// Soft policy of `q` under `prior`, with entries that underflow to zero
/// raised to `f64::MIN_POSITIVE` so it can serve as a prior.
fn designated_prior(q: &QTable, prior: &PolicyTable, beta: f64) -> Result<PolicyTable> {
    let policy = extract_policy(q, prior, beta)?;
    if policy.as_slice().iter().all(|p| *p >= f64::MIN_POSITIVE) {
        return Ok(policy);
    }
    let floored = policy
        .as_slice()
        .iter()
        .map(|p| p.max(f64::MIN_POSITIVE))
        .collect();
    PolicyTable::from_dense(policy.num_states(), policy.num_actions(), floored)
}

fn ensure_solved(solution: &SoftSolution, task: &Task) -> Result<()> {
    if solution.q.num_states() != task.num_states()
        || solution.q.num_actions() != task.num_actions()
    {
        return Err(Error::ShapeMismatch(
            "solution does not match its task".into(),
        ));
    }
    let (residual, _, _) = bellman_residual(&solution.q, task)?;
    let slack = 64.0 * f64::EPSILON * (1.0 + solution.q.max_abs());
    let tolerance = solution.trace.tolerance;
    if !(residual <= tolerance + slack) {
        return Err(Error::Unsolved {
            residual,
            tolerance,
        });
    }
    Ok(())
}

/// Corrective problem for a reward change `r -> new_reward` on the same
/// dynamics: `kappa = new_reward - r`, prior `pi*`, `base_q = Q*`.
pub fn reward_change_corrective(
    solution: &SoftSolution,
    new_reward: &RewardTable,
    base_task: &Task,
) -> Result<CorrectiveProblem> {
    base_task.reward.ensure_same_shape(new_reward)?;
    ensure_solved(solution, base_task)?;
    let kappa = new_reward.add_scaled(&base_task.reward, -1.0)?;
    let pi_star = designated_prior(&solution.q, &base_task.prior, base_task.beta)?;
    let v_star = extract_value(&solution.q, &base_task.prior, base_task.beta)?;
    let task = Task::new(
        base_task.dynamics.clone(),
        kappa,
        base_task.gamma,
        base_task.beta,
        pi_star,
    )?;
    Ok(CorrectiveProblem {
        task,
        base_q: solution.q.clone(),
        base_v: v_star,
        original_prior: base_task.prior.clone(),
        provenance: Provenance::RewardChange,
    })
}

/// Assembles the target solution from a solved corrective problem.
///
/// `Q = base_q + K`; `V` and the policy are recomputed from `Q` under the
/// original prior and checked against `base_v + V_K` and `pi_K`. The
/// residual of `k_star` is measured with [`CorrectiveProblem::residual`].
pub fn combine(
    corrective: &CorrectiveProblem,
    k_star: &QTable,
    tolerance: f64,
) -> Result<SoftSolution> {
    corrective.check_k(k_star)?;
    let (residual, state, action) = corrective.residual(k_star)?;
    let slack = 64.0 * f64::EPSILON * (1.0 + k_star.max_abs() + corrective.base_q.max_abs());
    if !(residual <= tolerance + slack) {
        return Err(Error::ResidualTooLarge {
            residual,
            tolerance,
            state,
            action,
        });
    }

    let beta = corrective.task.beta;
    let q = corrective.base_q.add_scaled(k_star, 1.0)?;
    let (v_k, pi_k) = corrective.value_and_policy(k_star)?;
    let v = extract_value(&q, &corrective.original_prior, beta)?;
    let policy = extract_policy(&q, &corrective.original_prior, beta)?;

    let v_gap = v
        .iter()
        .zip(corrective.base_v.iter().zip(&v_k))
        .map(|(vt, (vb, vk))| (vt - (vb + vk)).abs())
        .fold(0.0, f64::max);
    if !(v_gap <= IDENTITY_TOLERANCE) {
        return Err(Error::IdentityViolation {
            identity: "V = V_base + V_K".into(),
            residual: v_gap,
            tolerance: IDENTITY_TOLERANCE,
        });
    }
    let pi_gap = policy.max_abs_diff(&pi_k)?;
    if !(pi_gap <= IDENTITY_TOLERANCE) {
        return Err(Error::IdentityViolation {
            identity: "pi = pi_K".into(),
            residual: pi_gap,
            tolerance: IDENTITY_TOLERANCE,
        });
    }

    Ok(SoftSolution {
        q,
        v,
        policy,
        trace: ConvergenceTrace::assembled(tolerance),
    })
}

/// Moves a task to a new prior `pi1`, compensating in the reward.
///
/// Returns the task `<p, r + (1/beta) log(pi0/pi1), gamma, beta, pi1>` and the
/// shift `Delta(s,a) = (1/beta) log(pi0/pi1)` with `Q_new* = Q* + Delta`.
pub fn prior_change(task: &Task, new_prior: &PolicyTable) -> Result<(Task, QTable)> {
    if new_prior.num_states() != task.num_states() || new_prior.num_actions() != task.num_actions()
    {
        return Err(Error::ShapeMismatch("new prior does not match task".into()));
    }
    new_prior.require_positive()?;
    let (ns, na) = (task.num_states(), task.num_actions());
    let shift = QTable::from_fn(ns, na, |s, a| {
        (task.prior.get(s, a) / new_prior.get(s, a)).ln() / task.beta
    });
    let reward =
        RewardTable::from_fn(ns, na, |s, a, n| task.reward.get(s, a, n) + shift.get(s, a))?;
    let shifted = Task::new(
        task.dynamics.clone(),
        reward,
        task.gamma,
        task.beta,
        new_prior.clone(),
    )?;
    Ok((shifted, shift))
}

fn expectations(
    dynamics: &TabularDynamics,
    per_next: impl Fn(usize, usize) -> Vec<f64>,
) -> Vec<f64> {
    let (ns, na) = (dynamics.num_states(), dynamics.num_actions());
    let mut out = Vec::with_capacity(ns * na);
    for s in 0..ns {
        for a in 0..na {
            out.push(dynamics.expectation(s, a, &per_next(s, a)));
        }
    }
    out
}

/// Corrective problem for a simultaneous change of dynamics `p -> q` and
/// reward `r -> new_reward`.
///
/// `kappa(s,a) = E_q[new_reward] - E_p[r] + gamma (E_q - E_p) V*`, prior `pi*`,
/// dynamics `q`. With `new_reward = r` and `r` independent of `s'` this is the
/// pure dynamics-change correction `gamma (E_q - E_p) V*`.
pub fn reward_and_dynamics_corrective(
    solution: &SoftSolution,
    base_task: &Task,
    new_dynamics: &TabularDynamics,
    new_reward: &RewardTable,
) -> Result<CorrectiveProblem> {
    base_task.dynamics.ensure_same_shape(new_dynamics)?;
    base_task.reward.ensure_same_shape(new_reward)?;
    ensure_solved(solution, base_task)?;
    let (ns, na) = (base_task.num_states(), base_task.num_actions());
    let (gamma, beta) = (base_task.gamma, base_task.beta);
    let v_star = extract_value(&solution.q, &base_task.prior, beta)?;
    let pi_star = designated_prior(&solution.q, &base_task.prior, beta)?;

    let er_old = base_task.expected_rewards();
    let er_new = expectations(new_dynamics, |s, a| new_reward.row(s, a).to_vec());
    let ev_old = expectations(&base_task.dynamics, |_, _| v_star.clone());
    let ev_new = expectations(new_dynamics, |_, _| v_star.clone());
    let kappa: Vec<f64> = (0..ns * na)
        .map(|i| (er_new[i] - er_old[i]) + gamma * (ev_new[i] - ev_old[i]))
        .collect();

    let provenance = if new_reward == &base_task.reward {
        Provenance::DynamicsChange
    } else {
        Provenance::RewardAndDynamicsChange
    };
    let task = Task::new(
        new_dynamics.clone(),
        RewardTable::from_state_action(ns, na, &kappa)?,
        gamma,
        beta,
        pi_star,
    )?;
    Ok(CorrectiveProblem {
        task,
        base_q: solution.q.clone(),
        base_v: v_star,
        original_prior: base_task.prior.clone(),
        provenance,
    })
}

/// Corrective problem for a dynamics change `p -> q` with the reward kept.
pub fn dynamics_change_corrective(
    solution: &SoftSolution,
    new_dynamics: &TabularDynamics,
    base_task: &Task,
) -> Result<CorrectiveProblem> {
    reward_and_dynamics_corrective(solution, base_task, new_dynamics, &base_task.reward)
}

/// Reward `r_bar` under dynamics `q` whose optimal action-value function is
/// the given `Q*` of `<p, r>`:
/// `r_bar(s,a,s') = r(s,a,s') + (E_p r - E_q r)(s,a) + gamma (E_p V* - E_q V*)(s,a)`.
///
/// For rewards that do not depend on `s'` this reduces to
/// `r(s,a) - gamma E_q V* + gamma E_p V*`.
pub fn free_solution_reward(
    solution: &SoftSolution,
    new_dynamics: &TabularDynamics,
    base_task: &Task,
) -> Result<RewardTable> {
    base_task.dynamics.ensure_same_shape(new_dynamics)?;
    ensure_solved(solution, base_task)?;
    let (ns, na) = (base_task.num_states(), base_task.num_actions());
    let gamma = base_task.gamma;
    let v_star = extract_value(&solution.q, &base_task.prior, base_task.beta)?;
    let er_p = base_task.expected_rewards();
    let er_q = expectations(new_dynamics, |s, a| base_task.reward.row(s, a).to_vec());
    let ev_p = expectations(&base_task.dynamics, |_, _| v_star.clone());
    let ev_q = expectations(new_dynamics, |_, _| v_star.clone());
    RewardTable::from_fn(ns, na, |s, a, n| {
        let i = s * na + a;
        base_task.reward.get(s, a, n) + (er_p[i] - er_q[i]) + gamma * (ev_p[i] - ev_q[i])
    })
}

/// Piecewise-multilinear function on a rectilinear grid, clamped outside it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpolationTable {
    /// Strictly increasing grid coordinates, one axis per member task.
    pub axes: Vec<Vec<f64>>,
    /// Values at grid nodes, row-major with the last axis fastest.
    pub values: Vec<f64>,
}

impl InterpolationTable {
    pub fn new(axes: Vec<Vec<f64>>, values: Vec<f64>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::InvalidArgument(
                "interpolation table needs an axis".into(),
            ));
        }
        for (i, axis) in axes.iter().enumerate() {
            if axis.is_empty() || axis.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(Error::InvalidArgument(format!(
                    "axis {i} must be non-empty and strictly increasing"
                )));
            }
        }
        let expected: usize = axes.iter().map(Vec::len).product();
        if values.len() != expected || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "interpolation table needs {expected} finite values, got {}",
                values.len()
            )));
        }
        Ok(Self { axes, values })
    }

    pub fn arity(&self) -> usize {
        self.axes.len()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        // per axis: lower node index and weight of the upper node
        let cells: Vec<(usize, f64)> = self
            .axes
            .iter()
            .zip(x)
            .map(|(axis, &xi)| {
                if axis.len() == 1 || xi <= axis[0] {
                    return (0, 0.0);
                }
                let last = axis.len() - 1;
                if xi >= axis[last] {
                    return (last - 1, 1.0);
                }
                let j = axis.partition_point(|g| *g <= xi) - 1;
                (j, (xi - axis[j]) / (axis[j + 1] - axis[j]))
            })
            .collect();
        let m = self.axes.len();
        let mut total = 0.0;
        for corner in 0..(1usize << m) {
            let mut weight = 1.0;
            let mut flat = 0;
            for (d, axis) in self.axes.iter().enumerate() {
                let (j, t) = cells[d];
                let upper = corner >> d & 1 == 1;
                let idx = if upper {
                    (j + 1).min(axis.len() - 1)
                } else {
                    j
                };
                weight *= if upper { t } else { 1.0 - t };
                flat = flat * axis.len() + idx;
            }
            if weight != 0.0 {
                total += weight * self.values[flat];
            }
        }
        total
    }
}

/// Pointwise composition function `f: R^M -> R`.
#[derive(Debug, Clone, PartialEq)]
pub enum CompositionFn {
    Min,
    Max,
    WeightedSum(Vec<f64>),
    Product,
    Table(InterpolationTable),
}

impl CompositionFn {
    /// Identity transform of a single task.
    pub fn identity() -> Self {
        CompositionFn::WeightedSum(vec![1.0])
    }

    pub fn apply(&self, x: &[f64]) -> f64 {
        match self {
            CompositionFn::Min => x.iter().copied().fold(f64::INFINITY, f64::min),
            CompositionFn::Max => x.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            CompositionFn::WeightedSum(w) => w.iter().zip(x).map(|(w, x)| w * x).sum(),
            CompositionFn::Product => x.iter().product(),
            CompositionFn::Table(t) => t.eval(x),
        }
    }

    fn check_arity(&self, members: usize) -> Result<()> {
        let need = match self {
            CompositionFn::WeightedSum(w) => Some(w.len()),
            CompositionFn::Table(t) => Some(t.arity()),
            _ => None,
        };
        match need {
            Some(n) if n != members => Err(Error::InvalidArgument(format!(
                "composition function takes {n} inputs but {members} tasks were given"
            ))),
            _ => Ok(()),
        }
    }

    pub fn from_document(doc: &CompositionFnDocument) -> Result<Self> {
        match doc.kind.as_str() {
            "min" => Ok(CompositionFn::Min),
            "max" => Ok(CompositionFn::Max),
            "product" => Ok(CompositionFn::Product),
            "identity" => Ok(CompositionFn::identity()),
            "wsum" => doc
                .weights
                .clone()
                .map(CompositionFn::WeightedSum)
                .ok_or_else(|| Error::InvalidArgument("wsum requires `weights`".into())),
            "custom" => {
                let table = doc
                    .table
                    .clone()
                    .ok_or_else(|| Error::InvalidArgument("custom requires `table`".into()))?;
                Ok(CompositionFn::Table(InterpolationTable::new(
                    table.axes,
                    table.values,
                )?))
            }
            other => Err(Error::InvalidArgument(format!(
                "unknown composition kind `{other}`"
            ))),
        }
    }

    pub fn to_document(&self) -> CompositionFnDocument {
        let (kind, weights, table) = match self {
            CompositionFn::Min => ("min", None, None),
            CompositionFn::Max => ("max", None, None),
            CompositionFn::Product => ("product", None, None),
            CompositionFn::WeightedSum(w) => ("wsum", Some(w.clone()), None),
            CompositionFn::Table(t) => ("custom", None, Some(t.clone())),
        };
        CompositionFnDocument {
            kind: kind.into(),
            weights,
            table,
        }
    }
}

/// Text form `{kind: min|max|wsum|product|custom|identity, weights?, table?}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionFnDocument {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<InterpolationTable>,
}

/// Composition document: member task files plus the function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionDocument {
    pub members: Vec<String>,
    pub f: CompositionFnDocument,
}

/// Mutually reward-varying member tasks and the function combining them.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositionSpec {
    pub member_tasks: Vec<Task>,
    pub f: CompositionFn,
}

impl CompositionSpec {
    pub fn new(member_tasks: Vec<Task>, f: CompositionFn) -> Result<Self> {
        let first = member_tasks
            .first()
            .ok_or_else(|| Error::InvalidArgument("composition needs at least one task".into()))?;
        for (m, task) in member_tasks.iter().enumerate().skip(1) {
            if !first.is_reward_varying_with(task) {
                return Err(Error::NotRewardVarying(format!(
                    "member {m} differs from member 0 in dynamics, gamma, beta or prior"
                )));
            }
        }
        f.check_arity(member_tasks.len())?;
        Ok(Self { member_tasks, f })
    }

    pub fn len(&self) -> usize {
        self.member_tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.member_tasks.is_empty()
    }

    /// The composed task with reward `f({r_m(s,a,s')})`.
    pub fn composed_task(&self) -> Result<Task> {
        let base = &self.member_tasks[0];
        let (ns, na) = (base.num_states(), base.num_actions());
        let mut inputs = vec![0.0; self.len()];
        let mut failure = None;
        let reward = RewardTable::from_fn(ns, na, |s, a, n| {
            for (slot, t) in inputs.iter_mut().zip(&self.member_tasks) {
                *slot = t.reward.get(s, a, n);
            }
            let value = self.f.apply(&inputs);
            if !value.is_finite() && failure.is_none() {
                failure = Some((s, a));
            }
            value
        })?;
        if let Some((state, action)) = failure {
            return Err(Error::UnboundedComposition { state, action });
        }
        base.with_reward(reward)
    }
}

/// Transformed value functions that define the composition prior.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositionPrior {
    pub v_f: StateValues,
    pub pi_f: PolicyTable,
    pub f_of_q: QTable,
}

/// Builds `f({Q*_m})`, `V_f`, `pi_f` and the corrective task with
/// `kappa(s,a,s') = f({r_m(s,a,s')}) + gamma V_f(s') - f({Q*_m(s,a)})`.
pub fn compose(
    spec: &CompositionSpec,
    member_solutions: &[SoftSolution],
) -> Result<(CompositionPrior, CorrectiveProblem)> {
    if member_solutions.len() != spec.len() {
        return Err(Error::InvalidArgument(format!(
            "{} solutions for {} member tasks",
            member_solutions.len(),
            spec.len()
        )));
    }
    for (sol, task) in member_solutions.iter().zip(&spec.member_tasks) {
        ensure_solved(sol, task)?;
    }
    let base = &spec.member_tasks[0];
    let (ns, na) = (base.num_states(), base.num_actions());
    let (gamma, beta) = (base.gamma, base.beta);

    let mut inputs = vec![0.0; spec.len()];
    let mut f_of_q = QTable::zeros(ns, na);
    for s in 0..ns {
        for a in 0..na {
            for (slot, sol) in inputs.iter_mut().zip(member_solutions) {
                *slot = sol.q.get(s, a);
            }
            let value = spec.f.apply(&inputs);
            if !value.is_finite() {
                return Err(Error::UnboundedComposition {
                    state: s,
                    action: a,
                });
            }
            f_of_q.set(s, a, value);
        }
    }
    let v_f = extract_value(&f_of_q, &base.prior, beta)?;
    let pi_f = designated_prior(&f_of_q, &base.prior, beta)?;

    let composed = spec.composed_task()?;
    let kappa = RewardTable::from_fn(ns, na, |s, a, n| {
        composed.reward.get(s, a, n) + gamma * v_f[n] - f_of_q.get(s, a)
    })?;
    let task = Task::new(base.dynamics.clone(), kappa, gamma, beta, pi_f.clone())?;
    let corrective = CorrectiveProblem {
        task,
        base_q: f_of_q.clone(),
        base_v: v_f.clone(),
        original_prior: base.prior.clone(),
        provenance: Provenance::Composition,
    };
    Ok((CompositionPrior { v_f, pi_f, f_of_q }, corrective))
}

/// One logged transition `(s, a, r, s')`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
}

/// Offline dataset with per-`(s, a, s')` visit counts.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionBatch {
    num_states: usize,
    num_actions: usize,
    records: Vec<Transition>,
    counts: Vec<u64>,
    reward_sums: Vec<f64>,
}

impl TransitionBatch {
    pub fn new(num_states: usize, num_actions: usize, records: Vec<Transition>) -> Result<Self> {
        let mut batch = Self {
            num_states,
            num_actions,
            records: Vec::with_capacity(records.len()),
            counts: vec![0; num_states * num_actions * num_states],
            reward_sums: vec![0.0; num_states * num_actions],
        };
        for t in records {
            batch.push(t)?;
        }
        Ok(batch)
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        for (what, index, bound) in [
            ("state", t.state, self.num_states),
            ("action", t.action, self.num_actions),
            ("next state", t.next_state, self.num_states),
        ] {
            if index >= bound {
                return Err(Error::IndexOutOfRange { what, index, bound });
            }
        }
        let pair = t.state * self.num_actions + t.action;
        self.counts[pair * self.num_states + t.next_state] += 1;
        self.reward_sums[pair] += t.reward;
        self.records.push(t);
        Ok(())
    }

    /// One record per non-zero successor of every `(s, a)`, rewarded by `reward`.
    /// Empirical frequencies equal `dynamics` exactly when it is deterministic.
    pub fn exhaustive(dynamics: &TabularDynamics, reward: &RewardTable) -> Result<Self> {
        let (ns, na) = (dynamics.num_states(), dynamics.num_actions());
        let mut records = Vec::new();
        for s in 0..ns {
            for a in 0..na {
                for &(next, _) in dynamics.support(s, a) {
                    records.push(Transition {
                        state: s,
                        action: a,
                        reward: reward.get(s, a, next),
                        next_state: next,
                    });
                }
            }
        }
        Self::new(ns, na, records)
    }

    /// `n` transitions with `(s, a)` drawn uniformly and `s' ~ p(.|s,a)`.
    pub fn sample<R: Rng + ?Sized>(
        rng: &mut R,
        dynamics: &TabularDynamics,
        reward: &RewardTable,
        n: usize,
    ) -> Result<Self> {
        let (ns, na) = (dynamics.num_states(), dynamics.num_actions());
        let mut records = Vec::with_capacity(n);
        for _ in 0..n {
            let s = rng.gen_range(0..ns);
            let a = rng.gen_range(0..na);
            let support = dynamics.support(s, a);
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut next = support[support.len() - 1].0;
            for &(j, p) in support {
                acc += p;
                if u < acc {
                    next = j;
                    break;
                }
            }
            records.push(Transition {
                state: s,
                action: a,
                reward: reward.get(s, a, next),
                next_state: next,
            });
        }
        Self::new(ns, na, records)
    }

    /// Same transitions with rewards replaced by `reward(s, a, s')`.
    pub fn relabel(&self, reward: &RewardTable) -> Result<Self> {
        let records = self
            .records
            .iter()
            .map(|t| Transition {
                reward: reward.get(t.state, t.action, t.next_state),
                ..*t
            })
            .collect();
        Self::new(self.num_states, self.num_actions, records)
    }

    pub fn records(&self) -> &[Transition] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn count(&self, s: usize, a: usize, next: usize) -> u64 {
        self.counts[(s * self.num_actions + a) * self.num_states + next]
    }

    pub fn visits(&self, s: usize, a: usize) -> u64 {
        let start = (s * self.num_actions + a) * self.num_states;
        self.counts[start..start + self.num_states].iter().sum()
    }

    /// First `(s, a)` never visited, if any.
    pub fn first_uncovered(&self) -> Option<(usize, usize)> {
        (0..self.num_states)
            .flat_map(|s| (0..self.num_actions).map(move |a| (s, a)))
            .find(|&(s, a)| self.visits(s, a) == 0)
    }

    /// Empirical kernel `count(s,a,s') / visits(s,a)`.
    pub fn empirical_dynamics(&self) -> Result<TabularDynamics> {
        if let Some((state, action)) = self.first_uncovered() {
            return Err(Error::Uncovered { state, action });
        }
        TabularDynamics::from_fn(self.num_states, self.num_actions, |s, a, n| {
            self.count(s, a, n) as f64 / self.visits(s, a) as f64
        })
    }
}

/// Learning-rate schedule `alpha_k = alpha0 / (1 + k / tau)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearningRate {
    pub alpha0: f64,
    pub tau: f64,
    /// Updates performed so far; advanced by [`offline_k_update`].
    pub step: u64,
}

impl Default for LearningRate {
    fn default() -> Self {
        Self {
            alpha0: 0.5,
            tau: 1000.0,
            step: 0,
        }
    }
}

impl LearningRate {
    pub fn rate(&self) -> f64 {
        self.alpha0 / (1.0 + self.step as f64 / self.tau)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OfflineMode {
    /// One empirical soft backup over the whole batch.
    ExactReplay,
    /// Per-record soft Q-learning updates in batch order.
    Stochastic(LearningRate),
}

/// Offline update of the corrective table `k` from logged transitions.
///
/// Record rewards must already be relabelled to `kappa`. The bootstrap term
/// uses the original prior on `base_q + k`, minus `base_v`, so only the
/// logged `(s, a, r, s')` tuples and the base solution are needed.
pub fn offline_k_update(
    k: &QTable,
    batch: &TransitionBatch,
    corrective: &CorrectiveProblem,
    mode: &mut OfflineMode,
) -> Result<QTable> {
    let (ns, na) = (corrective.task.num_states(), corrective.task.num_actions());
    if !k.same_shape(&corrective.base_q) || batch.num_states != ns || batch.num_actions != na {
        return Err(Error::ShapeMismatch(
            "batch, table and corrective problem disagree".into(),
        ));
    }
    let gamma = corrective.task.gamma;
    match mode {
        OfflineMode::ExactReplay => {
            if let Some((state, action)) = batch.first_uncovered() {
                return Err(Error::Uncovered { state, action });
            }
            let w = corrective.corrected_next_values(k);
            let mut out = QTable::zeros(ns, na);
            for s in 0..ns {
                for a in 0..na {
                    let pair = s * na + a;
                    let visits = batch.visits(s, a) as f64;
                    let row = &batch.counts[pair * ns..(pair + 1) * ns];
                    let cont: f64 = row
                        .iter()
                        .zip(&w)
                        .filter(|(c, _)| **c > 0)
                        .map(|(c, wn)| *c as f64 * wn)
                        .sum();
                    let value = (batch.reward_sums[pair] + gamma * cont) / visits;
                    if !value.is_finite() {
                        return Err(Error::NumericFailure {
                            state: s,
                            action: a,
                        });
                    }
                    out.set(s, a, value);
                }
            }
            Ok(out)
        }
        OfflineMode::Stochastic(schedule) => {
            let beta = corrective.task.beta;
            let mut out = k.clone();
            let mut shifted = vec![0.0; na];
            for t in &batch.records {
                for (a, slot) in shifted.iter_mut().enumerate() {
                    *slot = corrective.base_q.get(t.next_state, a) + out.get(t.next_state, a);
                }
                let next = soft_value(&shifted, corrective.original_prior.row(t.next_state), beta)
                    - corrective.base_v[t.next_state];
                let target = t.reward + gamma * next;
                let alpha = schedule.rate();
                let current = out.get(t.state, t.action);
                let value = current + alpha * (target - current);
                if !value.is_finite() {
                    return Err(Error::NumericFailure {
                        state: t.state,
                        action: t.action,
                    });
                }
                out.set(t.state, t.action, value);
                schedule.step += 1;
            }
            Ok(out)
        }
    }
}

/// Repeats exact-replay updates from `k0` until the sup-norm change is at
/// most `options.tolerance`.
pub fn replay_until_converged(
    batch: &TransitionBatch,
    corrective: &CorrectiveProblem,
    k0: Option<&QTable>,
    options: &SolveOptions,
) -> Result<(QTable, ConvergenceTrace)> {
    let mut k = k0.cloned().unwrap_or_else(|| {
        QTable::zeros(corrective.task.num_states(), corrective.task.num_actions())
    });
    let mut errors = Vec::new();
    let mut converged = false;
    let mut mode = OfflineMode::ExactReplay;
    for _ in 0..options.max_iter {
        let next = offline_k_update(&k, batch, corrective, &mut mode)?;
        let err = next.max_abs_diff(&k)?;
        k = next;
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
    Ok((k, trace))
}
