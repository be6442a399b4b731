#![allow(dead_code)]

use erl_core::random::{random_task, RandomTaskParams};
use erl_core::{SolveOptions, Task};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Tolerance tight enough that fixed-point errors stay far below 1e-8 for gamma <= 0.99.
pub fn tight() -> SolveOptions {
    SolveOptions {
        tolerance: 1e-12,
        max_iter: 1_000_000,
    }
}

pub fn random_params<R: Rng>(rng: &mut R) -> RandomTaskParams {
    RandomTaskParams {
        num_states: rng.gen_range(2..=20),
        num_actions: rng.gen_range(1..=4),
        gamma: [0.9, 0.98, 0.99][rng.gen_range(0..3)],
        beta: [1.0, 2.0, 3.0][rng.gen_range(0..3)],
        reward_range: (-1.0, 1.0),
        random_prior: rng.gen_bool(0.5),
    }
}

pub fn random_instance<R: Rng>(rng: &mut R) -> Task {
    let params = random_params(rng);
    random_task(rng, &params).unwrap()
}

pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
