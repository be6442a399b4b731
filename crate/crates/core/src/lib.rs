//! Tabular entropy-regularized reinforcement learning.
//!
//! The crate is organised around a dense task model ([`mdp`]), a soft value
//! iteration solver ([`solver`]), and the exact transfer identities built on
//! top of it: corrective value functions for reward, prior, dynamics and
//! composition changes ([`transfer`]), potential-based reward shaping and
//! inverse rewards ([`shaping`]). [`envs`] generates the gridworld families
//! used in the experiments, and [`random`] provides seeded random instances.

pub mod envs;
pub mod error;
pub mod mdp;
pub mod random;
pub mod shaping;
pub mod solver;
pub mod transfer;

pub use error::{Error, Result};
pub use mdp::{
    expected_reward, uniform_prior, validate_task, PolicyTable, RewardTable, TabularDynamics, Task,
    ValidationReport, Violation,
};
pub use solver::{
    bellman_error, extract_policy, extract_value, soft_backup, soft_policy_evaluation, solve,
    ConvergenceTrace, PolicyEvaluation, QTable, SoftSolution, SolveOptions, StateValues,
};
