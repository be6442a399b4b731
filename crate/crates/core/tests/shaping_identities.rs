mod common;

use common::{max_diff, random_instance, rng, tight};
use erl_core::envs::{grid_to_task, simple_wall_maze, Side};
use erl_core::random::{random_dynamics, random_policy, random_state_values};
use erl_core::shaping::{
    defeats_identifiability, evaluate_shaped_policy_identity, identifiability_residual,
    inverse_reward, shape, unshape_reward, unshape_solution, IdentifiabilityReading, Potential,
};
use erl_core::{solve, SolveOptions, Task};
use proptest::prelude::*;
use rand::Rng;

const ID_TOL: f64 = 1e-8;

fn random_potential<R: Rng>(r: &mut R, task: &Task, scale: f64) -> Potential {
    Potential::new(random_state_values(r, task.num_states(), scale)).unwrap()
}

#[test]
fn shaping_shifts_q_and_v_and_keeps_policy() {
    let mut r = rng(30);
    for _ in 0..100 {
        let task = random_instance(&mut r);
        let phi = random_potential(&mut r, &task, 1.0 / (1.0 - task.gamma));
        let shaped = shape(&task, &phi).unwrap();
        let original = solve(&task, &tight(), None).unwrap();
        let shaped_sol = solve(&shaped.task, &tight(), None).unwrap();
        for s in 0..task.num_states() {
            for a in 0..task.num_actions() {
                let expected = original.q.get(s, a) - phi.get(s);
                assert!((shaped_sol.q.get(s, a) - expected).abs() <= ID_TOL);
            }
            assert!((shaped_sol.v[s] - (original.v[s] - phi.get(s))).abs() <= ID_TOL);
        }
        assert!(shaped_sol.policy.max_abs_diff(&original.policy).unwrap() <= ID_TOL);
    }
}

#[test]
fn shaping_identity_holds_for_arbitrary_policies() {
    let mut r = rng(31);
    for _ in 0..50 {
        let task = random_instance(&mut r);
        let phi = random_potential(&mut r, &task, 5.0);
        let policy = random_policy(&mut r, task.num_states(), task.num_actions(), 0.0).unwrap();
        let report = evaluate_shaped_policy_identity(&task, &phi, &policy, &tight()).unwrap();
        assert!(report.converged);
        assert!(report.max_residual() <= ID_TOL, "{report:?}");
    }
}

#[test]
fn early_stopped_policies_stay_eps_optimal_after_shaping() {
    let eps = 1e-3;
    let mut r = rng(32);
    let mut checked = 0;
    for _ in 0..40 {
        let task = random_instance(&mut r);
        let phi = random_potential(&mut r, &task, 5.0);
        let early = SolveOptions {
            tolerance: f64::MIN_POSITIVE,
            max_iter: r.gen_range(1..30),
        };
        let policy = solve(&task, &early, None).unwrap().policy;
        let report = evaluate_shaped_policy_identity(&task, &phi, &policy, &tight()).unwrap();
        assert!(report.gap_residual <= ID_TOL);
        if report.suboptimality <= eps {
            checked += 1;
            assert!(report.suboptimality + report.gap_residual <= eps + ID_TOL);
        }
    }
    assert!(checked >= 5, "only {checked} eps-optimal policies");
}

#[test]
fn inverse_reward_round_trip() {
    let mut r = rng(33);
    for _ in 0..50 {
        let env = random_instance(&mut r);
        let (ns, na) = (env.num_states(), env.num_actions());
        let pi = random_policy(&mut r, ns, na, 0.05).unwrap();
        let v = Potential::new(random_state_values(&mut r, ns, 3.0)).unwrap();
        let reward =
            inverse_reward(&pi, &v, &env.dynamics, env.gamma, env.beta, &env.prior).unwrap();
        let sol = solve(&env.with_reward(reward).unwrap(), &tight(), None).unwrap();
        assert!(sol.policy.max_abs_diff(&pi).unwrap() <= 1e-6);
        assert!(max_diff(&sol.v, v.as_slice()) <= 1e-6);
    }
}

#[test]
fn identifiability_with_zero_psi_is_the_shaping_term() {
    let mut r = rng(34);
    for _ in 0..20 {
        let task = random_instance(&mut r);
        let (ns, na) = (task.num_states(), task.num_actions());
        let q = random_dynamics(&mut r, ns, na).unwrap();
        let gamma_tilde = r.gen_range(0.5..0.99);
        let phi = random_potential(&mut r, &task, 2.0);
        let psi = Potential::zeros(ns);
        let res = identifiability_residual(
            &task.dynamics,
            task.gamma,
            &phi,
            &q,
            gamma_tilde,
            &psi,
            IdentifiabilityReading::Standard,
        )
        .unwrap();
        let literal = identifiability_residual(
            &task.dynamics,
            task.gamma,
            &phi,
            &q,
            gamma_tilde,
            &psi,
            IdentifiabilityReading::Literal,
        )
        .unwrap();
        for s in 0..ns {
            for a in 0..na {
                let mut expected_phi = 0.0;
                for n in 0..ns {
                    expected_phi += task.dynamics.prob(s, a, n) * phi.get(n);
                }
                let standard = task.gamma * expected_phi - phi.get(s);
                let lit = task.gamma * phi.get(s) - expected_phi;
                assert!((res.get(s, a) - standard).abs() <= 1e-12);
                assert!((literal.get(s, a) - lit).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn identical_environments_are_never_identifiable() {
    let mut r = rng(35);
    let task = random_instance(&mut r);
    let ns = task.num_states();
    let zero = Potential::zeros(ns);
    let res = identifiability_residual(
        &task.dynamics,
        task.gamma,
        &zero,
        &task.dynamics,
        task.gamma,
        &zero,
        IdentifiabilityReading::Standard,
    )
    .unwrap();
    assert_eq!(res.max_abs(), 0.0);
    assert!(!defeats_identifiability(&res, &zero, &zero, ID_TOL));

    let phi = Potential::new((0..ns).map(|s| s as f64).collect()).unwrap();
    let res = identifiability_residual(
        &task.dynamics,
        task.gamma,
        &phi,
        &task.dynamics,
        task.gamma,
        &phi,
        IdentifiabilityReading::Standard,
    )
    .unwrap();
    assert_eq!(res.max_abs(), 0.0);
    assert_eq!(defeats_identifiability(&res, &phi, &phi, ID_TOL), ns > 1);
}

#[test]
fn unshaped_solution_matches_direct_solve_on_maze() {
    let spec = simple_wall_maze(9, 3, Side::Left)
        .unwrap()
        .with_slip(0.1)
        .unwrap();
    let task = grid_to_task(&spec, 0.95, 2.0, None).unwrap().task;
    let mut r = rng(36);
    let phi = random_potential(&mut r, &task, 10.0);
    let shaped = shape(&task, &phi).unwrap();
    let back = unshape_solution(&solve(&shaped.task, &tight(), None).unwrap(), &phi).unwrap();
    let direct = solve(&task, &tight(), None).unwrap();
    assert!(back.q.max_abs_diff(&direct.q).unwrap() <= ID_TOL);
    assert!(max_diff(&back.v, &direct.v) <= ID_TOL);
    assert!(back.policy.max_abs_diff(&direct.policy).unwrap() <= ID_TOL);
}

#[test]
fn sibling_value_potential_keeps_maze_policy() {
    for h in [1, 4, 7] {
        let left = simple_wall_maze(11, h, Side::Left).unwrap();
        let right = simple_wall_maze(11, h, Side::Right).unwrap();
        let target = grid_to_task(&left, 0.99, 3.0, None).unwrap().task;
        let sibling = grid_to_task(&right, 0.99, 3.0, None).unwrap().task;
        let phi = Potential::from_solution(&solve(&sibling, &tight(), None).unwrap()).unwrap();
        let shaped = shape(&target, &phi).unwrap();
        let a = solve(&target, &tight(), None).unwrap();
        let b = solve(&shaped.task, &tight(), None).unwrap();
        assert!(a.policy.max_abs_diff(&b.policy).unwrap() <= ID_TOL);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn unshape_inverts_shape(seed in any::<u64>()) {
        let mut r = rng(seed);
        let task = random_instance(&mut r);
        let phi = random_potential(&mut r, &task, 5.0);
        let shaped = shape(&task, &phi).unwrap();
        let back = unshape_reward(&shaped.task, &phi).unwrap();
        prop_assert!(back.max_abs_diff(&task.reward).unwrap() <= 1e-14);
    }
}
