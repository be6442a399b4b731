//! Seeded random instances for property checks and benchmarks.

use rand::Rng;

use crate::error::Result;
use crate::mdp::{uniform_prior, PolicyTable, RewardTable, TabularDynamics, Task};
use crate::solver::QTable;

/// Random kernel; each row keeps a random subset of at least one successor.
pub fn random_dynamics<R: Rng + ?Sized>(
    rng: &mut R,
    num_states: usize,
    num_actions: usize,
) -> Result<TabularDynamics> {
    let mut probs = Vec::with_capacity(num_states * num_actions * num_states);
    for _ in 0..num_states * num_actions {
        let mut row: Vec<f64> = (0..num_states)
            .map(|_| {
                if rng.gen_bool(0.6) {
                    rng.gen::<f64>() + 1e-3
                } else {
                    0.0
                }
            })
            .collect();
        if row.iter().all(|p| *p == 0.0) {
            let j = rng.gen_range(0..num_states);
            row[j] = 1.0;
        }
        let sum: f64 = row.iter().sum();
        probs.extend(row.iter().map(|p| p / sum));
    }
    TabularDynamics::from_dense(num_states, num_actions, probs)
}

pub fn random_reward<R: Rng + ?Sized>(
    rng: &mut R,
    num_states: usize,
    num_actions: usize,
    low: f64,
    high: f64,
) -> Result<RewardTable> {
    RewardTable::from_fn(num_states, num_actions, |_, _, _| rng.gen_range(low..=high))
}

/// Strictly positive random policy; rows are bounded away from zero by `min_prob`.
pub fn random_policy<R: Rng + ?Sized>(
    rng: &mut R,
    num_states: usize,
    num_actions: usize,
    min_prob: f64,
) -> Result<PolicyTable> {
    let mut probs = Vec::with_capacity(num_states * num_actions);
    for _ in 0..num_states {
        let row: Vec<f64> = (0..num_actions)
            .map(|_| rng.gen::<f64>() + min_prob)
            .collect();
        let sum: f64 = row.iter().sum();
        probs.extend(row.iter().map(|p| p / sum));
    }
    PolicyTable::from_dense(num_states, num_actions, probs)
}

pub fn random_q<R: Rng + ?Sized>(
    rng: &mut R,
    num_states: usize,
    num_actions: usize,
    bound: f64,
) -> QTable {
    QTable::from_fn(num_states, num_actions, |_, _| {
        rng.gen_range(-bound..=bound)
    })
}

pub fn random_state_values<R: Rng + ?Sized>(
    rng: &mut R,
    num_states: usize,
    bound: f64,
) -> Vec<f64> {
    (0..num_states)
        .map(|_| rng.gen_range(-bound..=bound))
        .collect()
}

/// Parameters for [`random_task`].
#[derive(Debug, Clone, Copy)]
pub struct RandomTaskParams {
    pub num_states: usize,
    pub num_actions: usize,
    pub gamma: f64,
    pub beta: f64,
    pub reward_range: (f64, f64),
    pub random_prior: bool,
}

pub fn random_task<R: Rng + ?Sized>(rng: &mut R, params: &RandomTaskParams) -> Result<Task> {
    let (ns, na) = (params.num_states, params.num_actions);
    let dynamics = random_dynamics(rng, ns, na)?;
    let reward = random_reward(rng, ns, na, params.reward_range.0, params.reward_range.1)?;
    let prior = if params.random_prior {
        random_policy(rng, ns, na, 0.05)?
    } else {
        uniform_prior(ns, na)?
    };
    Task::new(dynamics, reward, params.gamma, params.beta, prior)
}
