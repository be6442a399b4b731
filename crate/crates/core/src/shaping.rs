//! Potential-based reward shaping, inverse rewards and the identifiability check.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{PolicyTable, RewardTable, TabularDynamics, Task};
use crate::solver::{soft_policy_evaluation, solve, QTable, SoftSolution, SolveOptions};

/// Bounded state function, used as a shaping potential or a target value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Potential {
    phi: Vec<f64>,
}

impl Potential {
    pub fn new(phi: Vec<f64>) -> Result<Self> {
        if let Some(state) = phi.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinitePotential { state });
        }
        Ok(Self { phi })
    }

    pub fn zeros(num_states: usize) -> Self {
        Self {
            phi: vec![0.0; num_states],
        }
    }

    pub fn constant(num_states: usize, c: f64) -> Result<Self> {
        Self::new(vec![c; num_states])
    }

    /// The soft value `V*` of a solved task.
    pub fn from_solution(solution: &SoftSolution) -> Result<Self> {
        Self::new(solution.v.clone())
    }

    pub fn len(&self) -> usize {
        self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }

    pub fn get(&self, s: usize) -> f64 {
        self.phi[s]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.phi
    }

    pub fn is_constant(&self) -> bool {
        self.phi.windows(2).all(|w| w[0] == w[1])
    }

    fn check_len(&self, num_states: usize) -> Result<()> {
        if self.phi.len() != num_states {
            return Err(Error::ShapeMismatch(format!(
                "potential has {} entries, expected {num_states}",
                self.phi.len()
            )));
        }
        Ok(())
    }
}

impl TryFrom<Vec<f64>> for Potential {
    type Error = Error;

    fn try_from(phi: Vec<f64>) -> Result<Self> {
        Self::new(phi)
    }
}

impl From<Potential> for Vec<f64> {
    fn from(p: Potential) -> Self {
        p.phi
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapedTask {
    /// Task with reward `r + gamma phi(s') - phi(s)`.
    pub task: Task,
    pub potential: Potential,
    pub original: Task,
}

/// Adds `F(s,a,s') = gamma phi(s') - phi(s)` to the reward.
pub fn shape(task: &Task, potential: &Potential) -> Result<ShapedTask> {
    potential.check_len(task.num_states())?;
    let gamma = task.gamma;
    let reward = RewardTable::from_fn(task.num_states(), task.num_actions(), |s, a, n| {
        task.reward.get(s, a, n) + (gamma * potential.get(n) - potential.get(s))
    })?;
    Ok(ShapedTask {
        task: task.with_reward(reward)?,
        potential: potential.clone(),
        original: task.clone(),
    })
}

/// Inverse of the reward transform: `r = r_shaped - (gamma phi(s') - phi(s))`.
pub fn unshape_reward(shaped: &Task, potential: &Potential) -> Result<RewardTable> {
    potential.check_len(shaped.num_states())?;
    let gamma = shaped.gamma;
    RewardTable::from_fn(shaped.num_states(), shaped.num_actions(), |s, a, n| {
        shaped.reward.get(s, a, n) - (gamma * potential.get(n) - potential.get(s))
    })
}

/// Maps a shaped-task solution back: `Q + phi`, `V + phi`, same policy.
pub fn unshape_solution(
    shaped_solution: &SoftSolution,
    potential: &Potential,
) -> Result<SoftSolution> {
    let q = &shaped_solution.q;
    potential.check_len(q.num_states())?;
    if shaped_solution.v.len() != q.num_states() {
        return Err(Error::ShapeMismatch(
            "value vector does not match Q table".into(),
        ));
    }
    Ok(SoftSolution {
        q: q.add_state_values(potential.as_slice(), 1.0)?,
        v: shaped_solution
            .v
            .iter()
            .zip(potential.as_slice())
            .map(|(v, p)| v + p)
            .collect(),
        policy: shaped_solution.policy.clone(),
        trace: shaped_solution.trace.clone(),
    })
}

/// Residuals of the shaping identities for a fixed policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ShapingIdentityReport {
    /// `max |Q~^pi - (Q^pi - phi)|`
    pub q_residual: f64,
    /// `max |V~^pi - (V^pi - phi)|`
    pub v_residual: f64,
    /// `max |(V~^pi - V~*) - (V^pi - V*)|`
    pub gap_residual: f64,
    /// `max |V^pi - V*|` in the original task.
    pub suboptimality: f64,
    pub converged: bool,
}

impl ShapingIdentityReport {
    pub fn max_residual(&self) -> f64 {
        self.q_residual.max(self.v_residual).max(self.gap_residual)
    }
}

/// Evaluates `policy` in both the original and the shaped task and compares.
pub fn evaluate_shaped_policy_identity(
    task: &Task,
    potential: &Potential,
    policy: &PolicyTable,
    options: &SolveOptions,
) -> Result<ShapingIdentityReport> {
    let shaped = shape(task, potential)?;
    let original_eval = soft_policy_evaluation(task, policy, options)?;
    let shaped_eval = soft_policy_evaluation(&shaped.task, policy, options)?;
    let original_opt = solve(task, options, None)?;
    let shaped_opt = solve(&shaped.task, options, None)?;

    let expected_q = original_eval
        .q
        .add_state_values(potential.as_slice(), -1.0)?;
    let q_residual = shaped_eval.q.max_abs_diff(&expected_q)?;
    let mut v_residual = 0.0f64;
    let mut gap_residual = 0.0f64;
    let mut suboptimality = 0.0f64;
    for s in 0..task.num_states() {
        let (vp, vs) = (original_eval.v[s], shaped_eval.v[s]);
        v_residual = v_residual.max((vs - (vp - potential.get(s))).abs());
        gap_residual = gap_residual.max(((vs - shaped_opt.v[s]) - (vp - original_opt.v[s])).abs());
        suboptimality = suboptimality.max((vp - original_opt.v[s]).abs());
    }
    Ok(ShapingIdentityReport {
        q_residual,
        v_residual,
        gap_residual,
        suboptimality,
        converged: original_eval.converged()
            && shaped_eval.converged()
            && original_opt.trace.converged
            && shaped_opt.trace.converged,
    })
}

/// Reward under which `target_policy` is soft-optimal with value `target_value`:
/// `R(s,a,s') = (1/beta) log(pi(a|s)/pi0(a|s)) + v(s) - gamma v(s')`.
pub fn inverse_reward(
    target_policy: &PolicyTable,
    target_value: &Potential,
    dynamics: &TabularDynamics,
    gamma: f64,
    beta: f64,
    prior: &PolicyTable,
) -> Result<RewardTable> {
    let (ns, na) = (dynamics.num_states(), dynamics.num_actions());
    for (name, table) in [("target policy", target_policy), ("prior", prior)] {
        if table.num_states() != ns || table.num_actions() != na {
            return Err(Error::ShapeMismatch(format!(
                "{name} does not match dynamics"
            )));
        }
    }
    target_value.check_len(ns)?;
    target_policy.require_positive()?;
    prior.require_positive()?;
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "beta must be positive, got {beta}"
        )));
    }
    RewardTable::from_fn(ns, na, |s, a, n| {
        (target_policy.get(s, a) / prior.get(s, a)).ln() / beta + target_value.get(s)
            - gamma * target_value.get(n)
    })
}

/// Index placement for [`identifiability_residual`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IdentifiabilityReading {
    /// `gamma E_p phi(s') - phi(s)`, the shaping-term form.
    #[default]
    Standard,
    /// `gamma phi(s) - E_p phi(s')`, the indices as literally printed.
    Literal,
}

/// `(s, a)` residual of the condition under which `(p, gamma)` and
/// `(q, gamma~)` cannot be told apart through the potentials `phi`, `psi`.
pub fn identifiability_residual(
    p: &TabularDynamics,
    gamma: f64,
    phi: &Potential,
    q: &TabularDynamics,
    gamma_tilde: f64,
    psi: &Potential,
    reading: IdentifiabilityReading,
) -> Result<QTable> {
    p.ensure_same_shape(q)?;
    let (ns, na) = (p.num_states(), p.num_actions());
    phi.check_len(ns)?;
    psi.check_len(ns)?;
    let term = |dyn_: &TabularDynamics, g: f64, pot: &Potential, s: usize, a: usize| {
        let expected = dyn_.expectation(s, a, pot.as_slice());
        match reading {
            IdentifiabilityReading::Standard => g * expected - pot.get(s),
            IdentifiabilityReading::Literal => g * pot.get(s) - expected,
        }
    };
    Ok(QTable::from_fn(ns, na, |s, a| {
        term(p, gamma, phi, s, a) - term(q, gamma_tilde, psi, s, a)
    }))
}

/// True when the residual vanishes within `tolerance` for a pair that is
/// not made of two constant potentials.
pub fn defeats_identifiability(
    residual: &QTable,
    phi: &Potential,
    psi: &Potential,
    tolerance: f64,
) -> bool {
    let trivial = phi.is_constant() && psi.is_constant();
    !trivial && residual.max_abs() <= tolerance
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::uniform_prior;

    fn chain() -> Task {
        Task::new(
            TabularDynamics::deterministic(3, 2, |s, a| {
                if a == 0 {
                    s.saturating_sub(1)
                } else {
                    (s + 1).min(2)
                }
            })
            .unwrap(),
            RewardTable::from_fn(3, 2, |_, _, n| if n == 2 { 1.0 } else { 0.0 }).unwrap(),
            0.9,
            2.0,
            uniform_prior(3, 2).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn zero_potential_is_identity() {
        let task = chain();
        let shaped = shape(&task, &Potential::zeros(3)).unwrap();
        assert_eq!(shaped.task, task);
    }

    #[test]
    fn constant_potential_shifts_reward() {
        let task = chain();
        let shaped = shape(&task, &Potential::constant(3, 2.0).unwrap()).unwrap();
        for (r0, r1) in task
            .reward
            .as_slice()
            .iter()
            .zip(shaped.task.reward.as_slice())
        {
            assert!((r1 - (r0 + (0.9 - 1.0) * 2.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn non_finite_potential_rejected() {
        assert!(matches!(
            Potential::new(vec![0.0, f64::NAN]),
            Err(Error::NonFinitePotential { state: 1 })
        ));
        assert!(serde_json::from_str::<Potential>("[1.0, 2.0]").is_ok());
    }

    #[test]
    fn potential_length_checked() {
        assert!(matches!(
            shape(&chain(), &Potential::zeros(2)),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn inverse_reward_of_prior_and_constant_value() {
        let task = chain();
        let r = inverse_reward(
            &task.prior,
            &Potential::constant(3, 4.0).unwrap(),
            &task.dynamics,
            0.9,
            2.0,
            &task.prior,
        )
        .unwrap();
        assert!(r.as_slice().iter().all(|x| (x - 4.0 * 0.1).abs() < 1e-14));
    }

    #[test]
    fn inverse_reward_rejects_zero_entries() {
        let task = chain();
        let pi = PolicyTable::from_dense(3, 2, vec![1.0, 0.0, 0.5, 0.5, 0.5, 0.5]).unwrap();
        assert!(inverse_reward(
            &pi,
            &Potential::zeros(3),
            &task.dynamics,
            0.9,
            2.0,
            &task.prior
        )
        .is_err());
    }

    #[test]
    fn identifiability_trivial_cases() {
        let task = chain();
        let zero = Potential::zeros(3);
        let r = identifiability_residual(
            &task.dynamics,
            0.9,
            &zero,
            &task.dynamics,
            0.5,
            &zero,
            IdentifiabilityReading::Standard,
        )
        .unwrap();
        assert_eq!(r.max_abs(), 0.0);
        assert!(!defeats_identifiability(&r, &zero, &zero, 1e-12));

        let phi = Potential::new(vec![1.0, -2.0, 0.5]).unwrap();
        for reading in [
            IdentifiabilityReading::Standard,
            IdentifiabilityReading::Literal,
        ] {
            let r = identifiability_residual(
                &task.dynamics,
                0.9,
                &phi,
                &task.dynamics,
                0.9,
                &phi,
                reading,
            )
            .unwrap();
            assert_eq!(r.max_abs(), 0.0);
            assert!(defeats_identifiability(&r, &phi, &phi, 1e-12));
        }
    }

    #[test]
    fn literal_reading_differs() {
        let task = chain();
        let phi = Potential::new(vec![1.0, 0.0, 0.0]).unwrap();
        let zero = Potential::zeros(3);
        let std_r = identifiability_residual(
            &task.dynamics,
            0.9,
            &phi,
            &task.dynamics,
            0.9,
            &zero,
            IdentifiabilityReading::Standard,
        )
        .unwrap();
        let lit_r = identifiability_residual(
            &task.dynamics,
            0.9,
            &phi,
            &task.dynamics,
            0.9,
            &zero,
            IdentifiabilityReading::Literal,
        )
        .unwrap();
        // state 0, action 0 stays at state 0
        assert!((std_r.get(0, 0) - (0.9 - 1.0)).abs() < 1e-15);
        assert!((lit_r.get(0, 0) - (0.9 - 1.0)).abs() < 1e-15);
        // state 0, action 1 moves to state 1
        assert!((std_r.get(0, 1) + 1.0).abs() < 1e-15);
        assert!((lit_r.get(0, 1) - 0.9).abs() < 1e-15);
    }
}
