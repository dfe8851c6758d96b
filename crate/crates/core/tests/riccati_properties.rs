use delaylqr::matrix_kit::max_abs;
use delaylqr::plant::{example_system, CostWeights, SystemModel};
use delaylqr::riccati::*;
use delaylqr::sampling::{random_stabilized_instance, uniform_matrix};
use delaylqr::stability::{is_ms_stabilizing, policy_qstack, solve_lyapunov_stack};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Plain value iteration on the delay-free Riccati equation.
fn dare_gain(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> DMatrix<f64> {
    let mut p = q.clone();
    for _ in 0..100_000 {
        let s = r + b.transpose() * &p * b;
        let k = s.clone().lu().solve(&(b.transpose() * &p * a)).unwrap();
        let next = a.transpose() * &p * a + q - a.transpose() * &p * b * &k;
        let next = (&next + next.transpose()) * 0.5;
        let change = (&next - &p).amax();
        p = next;
        if change < 1e-15 * p.amax().max(1.0) {
            break;
        }
    }
    let s = r + b.transpose() * &p * b;
    s.lu().solve(&(b.transpose() * &p * a)).unwrap()
}

#[test]
fn noiseless_limit_matches_delay_free_riccati() {
    for d in 1..=3 {
        let (mut model, weights, _) = example_system();
        model.a_bar.fill(0.0);
        model.b_bar.fill(0.0);
        model.delay = d;
        let sol = solve_optimal(&model, &weights, &DMatrix::zeros(1, 2), 1e-13, 500).unwrap();
        let oracle = dare_gain(&model.a, &model.b, weights.q.as_matrix(), weights.r.as_matrix());
        assert!(max_abs(&(&sol.gain - &oracle)) < 1e-8, "d = {d}: {} vs {}", sol.gain, oracle);
    }
}

#[test]
fn noiseless_limit_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..20 {
        let (mut model, weights, k0) = random_stabilized_instance(&mut rng, 3, 2, 3, 0.95);
        model.a_bar.fill(0.0);
        model.b_bar.fill(0.0);
        if !is_ms_stabilizing(&model, &k0).unwrap().stabilizing {
            continue;
        }
        let sol = solve_optimal(&model, &weights, &k0, 1e-13, 500).unwrap();
        let oracle = dare_gain(&model.a, &model.b, weights.q.as_matrix(), weights.r.as_matrix());
        assert!(max_abs(&(&sol.gain - &oracle)) < 1e-8 * oracle.amax().max(1.0));
    }
}

fn check_monotone_run(model: &SystemModel, weights: &CostWeights, k0: &DMatrix<f64>) {
    let sol = solve_optimal(model, weights, k0, 1e-11, 500).unwrap();
    let d = model.delay;
    let stacks: Vec<_> = sol
        .history
        .iter()
        .map(|h| solve_lyapunov_stack(model, &h.gain, &policy_qstack(weights, &h.gain, d)).unwrap())
        .collect();
    for (h, s) in sol.history.iter().zip(&stacks) {
        assert!(h.radius < 1.0);
        assert!(s.p.iter().all(|p| p.min_eigenvalue() > 0.0));
    }
    for w in stacks.windows(2) {
        for (old, new) in w[0].p.iter().zip(&w[1].p) {
            assert!(old.sub(new).min_eigenvalue() >= -1e-8);
        }
    }
    assert!(sol.residual < 1e-8, "residual {}", sol.residual);
}

#[test]
fn policy_iteration_is_monotone() {
    let (model, weights, _) = example_system();
    check_monotone_run(&model, &weights, &DMatrix::zeros(1, 2));
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        let (model, weights, k0) = random_stabilized_instance(&mut rng, 3, 2, 3, 0.95);
        check_monotone_run(&model, &weights, &k0);
    }
}

#[test]
fn fixed_point_does_not_depend_on_start() {
    let (model, weights, _) = example_system();
    let base = solve_optimal(&model, &weights, &DMatrix::zeros(1, 2), 1e-12, 500).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut tried = 0;
    while tried < 10 {
        let k0 = uniform_matrix(&mut rng, 1, 2, 1.0);
        if !is_ms_stabilizing(&model, &k0).unwrap().stabilizing {
            continue;
        }
        tried += 1;
        let sol = solve_optimal(&model, &weights, &k0, 1e-12, 500).unwrap();
        assert!(max_abs(&(&sol.gain - &base.gain)) < 1e-6);
        assert!(sol.stack.max_abs_diff(&base.stack) < 1e-6);
    }
}

#[test]
fn optimal_gain_beats_perturbations() {
    let (model, weights, init) = example_system();
    let sol = solve_optimal(&model, &weights, &DMatrix::zeros(1, 2), 1e-12, 500).unwrap();
    let best = expected_cost(&model, &weights, &sol.stack, &init).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let k = &sol.gain + uniform_matrix(&mut rng, 1, 2, 0.05);
        let stack = solve_lyapunov_stack(&model, &k, &policy_qstack(&weights, &k, 2)).unwrap();
        let cost = expected_cost(&model, &weights, &stack, &init).unwrap();
        assert!(cost >= best - 1e-10, "{cost} < {best}");
        // the whole value matrix dominates, not only along x0
        assert!(stack.last().sub(sol.stack.last()).min_eigenvalue() >= -1e-9);
    }
}

#[test]
fn incremental_form_at_the_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let mut cases = vec![{
        let (model, weights, _) = example_system();
        (model, weights, DMatrix::zeros(1, 2))
    }];
    for _ in 0..20 {
        cases.push(random_stabilized_instance(&mut rng, 3, 2, 3, 0.95));
    }
    for (model, weights, k0) in cases {
        let sol = solve_optimal(&model, &weights, &k0, 1e-12, 500).unwrap();
        let legacy = convert_legacy(&sol.stack);
        let scale = sol.stack.last().amax().max(1.0);
        assert!(legacy_residual(&model, &weights, &legacy).unwrap() < 1e-8 * scale);
        assert!((legacy.total().as_matrix() - sol.stack.last().as_matrix()).amax() < 1e-10 * scale);
        assert!(sol.upsilon.min_eigenvalue() > 0.0);
        assert!(legacy.total().min_eigenvalue() > 0.0);
        assert!(legacy.get(1).min_eigenvalue() > 0.0);
        for j in 2..=model.delay + 1 {
            assert!(legacy.get(j).as_matrix().symmetric_eigenvalues().max() <= 1e-9 * scale);
        }
        assert!(convert_from_legacy(&legacy).max_abs_diff(&sol.stack) < 1e-12 * scale);
    }
}

#[test]
fn converged_stack_solves_its_own_riccati_equation() {
    let (model, weights, _) = example_system();
    let sol = solve_optimal(&model, &weights, &DMatrix::zeros(1, 2), 1e-12, 500).unwrap();
    assert!(riccati_residual(&model, &weights, &sol.stack, &sol.gain).unwrap() < 1e-8);
    let off = &sol.gain + DMatrix::from_element(1, 2, 0.01);
    assert!(riccati_residual(&model, &weights, &sol.stack, &off).unwrap() > 1e-3);
}
