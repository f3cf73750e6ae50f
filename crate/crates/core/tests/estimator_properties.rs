mod common;

use common::{normal_matrix, normal_vector, rel_err, rel_err_vec};
use manifold_gauss::estimator::{
    extract_conditioned_cov, mahalanobis_consistency, solve_constrained_gn, GnOptions,
    LinearConstraint, LinearResidual, NllsProblem,
};
use manifold_gauss::gaussian::{psd_rank, rng_from_seed};
use manifold_gauss::pushing::{generate_scenario, run_trial, trajectory_tangent_basis, PushConfig};
use manifold_gauss::{Gaussian, LinearManifold};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng as _;

struct LinearCase {
    problem: NllsProblem,
    info: DMatrix<f64>,
    rhs: DVector<f64>,
    c_mat: DMatrix<f64>,
    c_vec: DVector<f64>,
}

fn linear_case(seed: u64) -> LinearCase {
    let mut rng = rng_from_seed(seed);
    let n = rng.random_range(2..=8usize);
    let m = rng.random_range(1..n);
    let rows = n + rng.random_range(0..4usize);
    let a = normal_matrix(&mut rng, rows, n);
    let b = normal_vector(&mut rng, rows);
    let w_root = normal_matrix(&mut rng, rows, rows);
    let weight = &w_root * w_root.transpose() / rows as f64 + DMatrix::identity(rows, rows) * 0.5;
    let c_mat = normal_matrix(&mut rng, m, n);
    let c_vec = normal_vector(&mut rng, m);
    let mut problem = NllsProblem::new(n);
    problem
        .add_residual(LinearResidual {
            a: a.clone(),
            b: b.clone(),
            weight: weight.clone(),
        })
        .unwrap();
    problem.add_constraint(LinearConstraint {
        a: c_mat.clone(),
        b: c_vec.clone(),
    });
    let info = a.transpose() * &weight * &a;
    let rhs = a.transpose() * &weight * &b;
    LinearCase {
        problem,
        info,
        rhs,
        c_mat,
        c_vec,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn linear_gaussian_problems_are_solved_exactly(seed in any::<u64>()) {
        let case = linear_case(seed);
        let n = case.problem.state_dim();
        let report = solve_constrained_gn(&case.problem, &DVector::zeros(n), &GnOptions::default()).unwrap();
        prop_assert!(report.converged);
        prop_assert!(report.constraint_residual < 1e-8);

        let unconstrained_mean = case.info.clone().cholesky().unwrap().solve(&case.rhs);
        let g = Gaussian::new(unconstrained_mean, case.info.clone().try_inverse().unwrap()).unwrap();
        let plane = LinearManifold::new(case.c_mat.transpose(), case.c_vec.clone()).unwrap();
        let expected = plane.condition(&g).unwrap();
        prop_assert!(rel_err_vec(&report.solution, expected.mean()) < 1e-8);
        prop_assert!(rel_err(&extract_conditioned_cov(&report).unwrap(), expected.cov()) < 1e-8);
    }

    #[test]
    fn conditioned_covariance_is_annihilated_by_constraints(seed in any::<u64>()) {
        let case = linear_case(seed);
        let n = case.problem.state_dim();
        let report = solve_constrained_gn(&case.problem, &DVector::zeros(n), &GnOptions::default()).unwrap();
        let cov = &report.conditioned_cov;
        let a = &report.constraint_jacobian;
        prop_assert!((a * cov * a.transpose()).amax() < 1e-9 * cov.norm() * a.norm().powi(2).max(1.0));
        prop_assert_eq!(psd_rank(cov), n - a.nrows());
    }

    #[test]
    fn jacobians_of_linear_blocks_are_exact(seed in any::<u64>()) {
        let case = linear_case(seed);
        let mut rng = rng_from_seed(seed ^ 1);
        let x = normal_vector(&mut rng, case.problem.state_dim());
        prop_assert!(case.problem.max_jacobian_error(&x) < 1e-5);
    }
}

#[test]
fn pushing_jacobians_match_finite_differences_along_trajectory() {
    let s = generate_scenario(&PushConfig::default(), 31).unwrap();
    let problem = manifold_gauss::pushing::build_problem(&s).unwrap();
    let mut rng = rng_from_seed(8);
    for _ in 0..5 {
        let x = s.true_trajectory() + normal_vector(&mut rng, 3 * s.timesteps) * 0.05;
        assert!(problem.max_jacobian_error(&x) < 1e-5);
    }
}

#[test]
fn mahalanobis_of_sampled_errors_is_chi_squared() {
    let s = generate_scenario(&PushConfig::default(), 12).unwrap();
    let report = run_trial(&s).unwrap();
    let basis = trajectory_tangent_basis(&s, &report.estimate.solution);
    let dof = 2 * s.timesteps;
    let g = Gaussian::new(
        DVector::zeros(3 * s.timesteps),
        report.estimate.conditioned_cov.clone(),
    )
    .unwrap();
    let draws = 2000;
    let d2: Vec<f64> = g
        .sample(draws, 77)
        .iter()
        .map(|e| {
            mahalanobis_consistency(e, &report.estimate, &basis, dof)
                .unwrap()
                .powi(2)
        })
        .collect();
    let mean = d2.iter().sum::<f64>() / draws as f64;
    let se = (2.0 / dof as f64).sqrt() / (draws as f64).sqrt();
    assert!((mean - 1.0).abs() < 4.0 * se, "mean d^2 {mean}, se {se}");
}

#[test]
fn converged_pushing_estimates_are_feasible() {
    for seed in 0..5 {
        let s = generate_scenario(&PushConfig::default(), seed).unwrap();
        let report = run_trial(&s).unwrap();
        assert!(report.converged);
        assert!(report.estimate.constraint_residual < 1e-8);
        assert_eq!(psd_rank(&report.estimate.conditioned_cov), 2 * s.timesteps);
    }
}
