//! Equality-constrained nonlinear least squares with Laplace-style covariance extraction.
//!
//! Gauss-Newton steps solve the KKT system `[[J^T W J, A^T], [A, 0]] [dx; l] = [-J^T W r; -f]`.
//! At the solution the unconstrained information `J^T W J` is conditioned onto the
//! linearized constraints: `Sigma_cond = N (N^T Lambda N)^-1 N^T` with `N = null(A)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::symmetrize;
use crate::linear::{conditioned_cov_from_info, kkt_matrix, nullspace_basis};
use crate::smooth::finite_difference_jacobian;

/// A weighted residual `r(x)` contributing `r^T W r / 2` to the cost.
pub trait ResidualBlock: Send + Sync {
    fn dim(&self) -> usize;

    /// Predicted minus measured.
    fn residual(&self, x: &DVector<f64>) -> DVector<f64>;

    /// `dr/dx^T`, of shape `dim x state_dim`.
    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64>;

    /// Information weight `W` (inverse measurement covariance).
    fn weight(&self) -> &DMatrix<f64>;
}

/// A hard equality constraint `f(x) = 0`.
pub trait ConstraintBlock: Send + Sync {
    fn dim(&self) -> usize;

    fn value(&self, x: &DVector<f64>) -> DVector<f64>;

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64>;
}

/// `r(x) = A x - b`
#[derive(Debug, Clone)]
pub struct LinearResidual {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub weight: DMatrix<f64>,
}

impl ResidualBlock for LinearResidual {
    fn dim(&self) -> usize {
        self.b.len()
    }

    fn residual(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a * x - &self.b
    }

    fn jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        self.a.clone()
    }

    fn weight(&self) -> &DMatrix<f64> {
        &self.weight
    }
}

/// `f(x) = A x - b`
#[derive(Debug, Clone)]
pub struct LinearConstraint {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl ConstraintBlock for LinearConstraint {
    fn dim(&self) -> usize {
        self.b.len()
    }

    fn value(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a * x - &self.b
    }

    fn jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        self.a.clone()
    }
}

/// Residual and constraint blocks over a dense state vector.
pub struct NllsProblem {
    state_dim: usize,
    residuals: Vec<Box<dyn ResidualBlock>>,
    constraints: Vec<Box<dyn ConstraintBlock>>,
}

impl std::fmt::Debug for NllsProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NllsProblem")
            .field("state_dim", &self.state_dim)
            .field("residual_blocks", &self.residuals.len())
            .field("constraint_blocks", &self.constraints.len())
            .finish()
    }
}

impl NllsProblem {
    pub fn new(state_dim: usize) -> Self {
        Self {
            state_dim,
            residuals: Vec::new(),
            constraints: Vec::new(),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn residual_blocks(&self) -> &[Box<dyn ResidualBlock>] {
        &self.residuals
    }

    pub fn constraint_blocks(&self) -> &[Box<dyn ConstraintBlock>] {
        &self.constraints
    }

    /// Total number of scalar constraints.
    pub fn constraint_dim(&self) -> usize {
        self.constraints.iter().map(|c| c.dim()).sum()
    }

    /// Adds a residual block after checking that its weight is symmetric positive definite.
    pub fn add_residual(&mut self, block: impl ResidualBlock + 'static) -> Result<()> {
        let w = block.weight();
        if w.nrows() != block.dim() || w.ncols() != block.dim() {
            return Err(Error::DimensionMismatch {
                context: "residual weight",
                expected: block.dim(),
                actual: w.nrows(),
            });
        }
        let asym = (w - w.transpose()).amax();
        if asym > 1e-12 * w.amax() || w.clone().cholesky().is_none() {
            return Err(Error::InvalidArgument(
                "residual weight must be symmetric positive definite".into(),
            ));
        }
        self.residuals.push(Box::new(block));
        Ok(())
    }

    pub fn add_constraint(&mut self, block: impl ConstraintBlock + 'static) {
        self.constraints.push(Box::new(block));
    }

    /// Gauss-Newton information `J^T W J` and gradient `J^T W r` at `x`.
    pub fn normal_equations(&self, x: &DVector<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let n = self.state_dim;
        let mut info = DMatrix::zeros(n, n);
        let mut grad = DVector::zeros(n);
        for block in &self.residuals {
            let r = block.residual(x);
            let j = block.jacobian(x);
            if j.nrows() != block.dim() || j.ncols() != n || r.len() != block.dim() {
                return Err(Error::DimensionMismatch {
                    context: "residual block jacobian",
                    expected: n,
                    actual: j.ncols(),
                });
            }
            let jt_w = j.transpose() * block.weight();
            info += &jt_w * &j;
            grad += &jt_w * &r;
        }
        if info.iter().chain(grad.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "residuals",
            });
        }
        Ok((symmetrize(&info), grad))
    }

    /// Stacked constraint values and Jacobian at `x`.
    pub fn constraints_at(&self, x: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let n = self.state_dim;
        let m = self.constraint_dim();
        let mut values = DVector::zeros(m);
        let mut jac = DMatrix::zeros(m, n);
        let mut row = 0;
        for block in &self.constraints {
            let k = block.dim();
            let a = block.jacobian(x);
            if a.nrows() != k || a.ncols() != n {
                return Err(Error::DimensionMismatch {
                    context: "constraint block jacobian",
                    expected: n,
                    actual: a.ncols(),
                });
            }
            values.rows_mut(row, k).copy_from(&block.value(x));
            jac.rows_mut(row, k).copy_from(&a);
            row += k;
        }
        if values.iter().chain(jac.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "constraints",
            });
        }
        Ok((values, jac))
    }

    /// `sum r^T W r / 2` at `x`.
    pub fn cost(&self, x: &DVector<f64>) -> Result<f64> {
        let total: f64 = self
            .residuals
            .iter()
            .map(|b| {
                let r = b.residual(x);
                0.5 * r.dot(&(b.weight() * &r))
            })
            .sum();
        if total.is_finite() {
            Ok(total)
        } else {
            Err(Error::NonFinite {
                context: "residuals",
            })
        }
    }

    /// Largest relative error between analytic block Jacobians and central differences at `x`.
    pub fn max_jacobian_error(&self, x: &DVector<f64>) -> f64 {
        let step = 1e-6 * (1.0 + x.norm());
        let rel = |analytic: DMatrix<f64>, numeric: DMatrix<f64>| {
            let scale = analytic.norm().max(1e-12);
            (numeric - analytic).norm() / scale
        };
        let residual_err = self.residuals.iter().map(|b| {
            rel(
                b.jacobian(x),
                finite_difference_jacobian(|y| b.residual(y), x, step),
            )
        });
        let constraint_err = self.constraints.iter().map(|b| {
            rel(
                b.jacobian(x),
                finite_difference_jacobian(|y| b.value(y), x, step),
            )
        });
        residual_err.chain(constraint_err).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GnOptions {
    pub max_iters: usize,
    /// Converged once `|dx|_inf` falls below this.
    pub step_tolerance: f64,
    /// Required `|f(x)|_inf` at convergence.
    pub constraint_tolerance: f64,
}

impl Default for GnOptions {
    fn default() -> Self {
        Self {
            max_iters: 50,
            step_tolerance: 1e-10,
            constraint_tolerance: 1e-8,
        }
    }
}

/// Result of [`solve_constrained_gn`].
#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub solution: DVector<f64>,
    /// `J^T W J` at the solution.
    pub unconstrained_info: DMatrix<f64>,
    /// Stacked constraint Jacobian `A` at the solution.
    pub constraint_jacobian: DMatrix<f64>,
    pub conditioned_cov: DMatrix<f64>,
    pub constraint_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Full-step Gauss-Newton on the KKT system, starting from `init`.
pub fn solve_constrained_gn(
    problem: &NllsProblem,
    init: &DVector<f64>,
    opts: &GnOptions,
) -> Result<SolveReport> {
    let n = problem.state_dim();
    if init.len() != n {
        return Err(Error::DimensionMismatch {
            context: "initial state",
            expected: n,
            actual: init.len(),
        });
    }
    if init.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "initial state",
        });
    }
    let m = problem.constraint_dim();
    let mut x = init.clone();
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iters {
        iterations += 1;
        let (info, grad) = problem.normal_equations(&x)?;
        let (f, a) = problem.constraints_at(&x)?;
        check_kkt_solvable(&info, &a)?;
        let kkt = kkt_matrix(&info, &a.transpose());
        let mut rhs = DVector::zeros(n + m);
        rhs.rows_mut(0, n).copy_from(&(-grad));
        rhs.rows_mut(n, m).copy_from(&(-f));
        let sol = kkt
            .lu()
            .solve(&rhs)
            .ok_or(Error::Singular { name: "KKT matrix" })?;
        let step = sol.rows(0, n).into_owned();
        if step.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "Gauss-Newton step",
            });
        }
        x += &step;
        if step.amax() < opts.step_tolerance {
            let (f_new, _) = problem.constraints_at(&x)?;
            if f_new.is_empty() || f_new.amax() < opts.constraint_tolerance {
                converged = true;
                break;
            }
        }
    }

    let (unconstrained_info, _) = problem.normal_equations(&x)?;
    let (f, constraint_jacobian) = problem.constraints_at(&x)?;
    let conditioned_cov =
        conditioned_cov_with_constraints(&unconstrained_info, &constraint_jacobian)?;
    Ok(SolveReport {
        solution: x,
        unconstrained_info,
        constraint_jacobian,
        conditioned_cov,
        constraint_residual: if f.is_empty() { 0.0 } else { f.amax() },
        iterations,
        converged,
    })
}

/// The KKT matrix is nonsingular iff `A` has full row rank and `N^T Lambda N` is positive definite.
fn check_kkt_solvable(info: &DMatrix<f64>, a: &DMatrix<f64>) -> Result<()> {
    let (basis, rank) = nullspace_basis(a);
    if rank < a.nrows() {
        return Err(Error::Singular { name: "KKT matrix" });
    }
    if basis.ncols() == 0 {
        return Ok(());
    }
    let reduced = symmetrize(&(basis.transpose() * info * &basis));
    let eig = reduced.symmetric_eigenvalues();
    if eig.min() <= 1e-13 * eig.max() {
        return Err(Error::Singular { name: "KKT matrix" });
    }
    Ok(())
}

/// Recomputes `N (N^T Lambda' N)^-1 N^T` from the information and constraint Jacobian in `report`.
pub fn extract_conditioned_cov(report: &SolveReport) -> Result<DMatrix<f64>> {
    conditioned_cov_with_constraints(&report.unconstrained_info, &report.constraint_jacobian)
}

fn conditioned_cov_with_constraints(info: &DMatrix<f64>, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (basis, rank) = nullspace_basis(a);
    if rank < a.nrows() {
        return Err(Error::RankDeficientMatrix {
            name: "constraint Jacobian",
            rank,
            required: a.nrows(),
        });
    }
    conditioned_cov_from_info(info, &basis)
}

/// Normalized Mahalanobis distance `sqrt(e_t^T Sigma_t^-1 e_t / dof)` in tangent coordinates.
///
/// `error` must already lie in the span of `tangent_basis` (columns spanning `null(A)`);
/// `Sigma_t^-1 = B^T Lambda' B` so the statistic does not depend on the choice of basis.
pub fn mahalanobis_consistency(
    error: &DVector<f64>,
    report: &SolveReport,
    tangent_basis: &DMatrix<f64>,
    dof: usize,
) -> Result<f64> {
    if dof == 0 {
        return Err(Error::InvalidArgument(
            "degrees of freedom must be positive".into(),
        ));
    }
    let n = report.solution.len();
    if error.len() != n || tangent_basis.nrows() != n {
        return Err(Error::DimensionMismatch {
            context: "tangent error",
            expected: n,
            actual: error.len(),
        });
    }
    let gram = (tangent_basis.transpose() * tangent_basis)
        .cholesky()
        .ok_or(Error::Singular {
            name: "tangent basis",
        })?;
    let coords = gram.solve(&(tangent_basis.transpose() * error));
    let tangent_info =
        symmetrize(&(tangent_basis.transpose() * &report.unconstrained_info * tangent_basis));
    if tangent_info.clone().cholesky().is_none() {
        return Err(Error::Singular {
            name: "tangent covariance",
        });
    }
    let quad = coords.dot(&(&tangent_info * &coords));
    Ok((quad.max(0.0) / dof as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::Gaussian;
    use crate::linear::{condition_via_kkt, LinearManifold};
    use approx::assert_relative_eq;

    fn m(r: usize, c: usize, xs: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(r, c, xs)
    }

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn linear_problem() -> (NllsProblem, DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
        let a = m(
            4,
            3,
            &[1.0, 0.0, 0.5, 0.0, 2.0, 0.0, 1.0, 1.0, 1.0, 0.3, -0.2, 1.0],
        );
        let b = v(&[1.0, -0.5, 2.0, 0.3]);
        let w = m(
            4,
            4,
            &[
                2.0, 0.1, 0.0, 0.0, 0.1, 1.0, 0.0, 0.0, 0.0, 0.0, 3.0, 0.2, 0.0, 0.0, 0.2, 1.5,
            ],
        );
        let mut p = NllsProblem::new(3);
        p.add_residual(LinearResidual {
            a: a.clone(),
            b: b.clone(),
            weight: w.clone(),
        })
        .unwrap();
        (p, a, b, w)
    }

    #[test]
    fn unconstrained_linear_matches_weighted_least_squares() {
        let (p, a, b, w) = linear_problem();
        let report =
            solve_constrained_gn(&p, &v(&[5.0, -3.0, 1.0]), &GnOptions::default()).unwrap();
        let info = a.transpose() * &w * &a;
        let expected = info
            .clone()
            .cholesky()
            .unwrap()
            .solve(&(a.transpose() * &w * &b));
        assert!(report.converged);
        assert!(report.iterations <= 2);
        assert_relative_eq!(report.solution, expected, max_relative = 1e-12);
        let cov = extract_conditioned_cov(&report).unwrap();
        assert_relative_eq!(cov, info.try_inverse().unwrap(), max_relative = 1e-10);
    }

    #[test]
    fn linear_constraint_matches_kkt_closed_form() {
        let (mut p, a, b, w) = linear_problem();
        let ca = m(1, 3, &[1.0, -1.0, 2.0]);
        let cb = v(&[0.7]);
        p.add_constraint(LinearConstraint {
            a: ca.clone(),
            b: cb.clone(),
        });
        let report = solve_constrained_gn(&p, &v(&[0.0, 0.0, 0.0]), &GnOptions::default()).unwrap();
        let info = a.transpose() * &w * &a;
        let unconstrained = info
            .clone()
            .cholesky()
            .unwrap()
            .solve(&(a.transpose() * &w * &b));
        let oracle = condition_via_kkt(&info, &ca.transpose(), &unconstrained, &cb).unwrap();
        assert!(report.converged);
        assert_relative_eq!(&report.solution, oracle.mean(), max_relative = 1e-10);
        assert_relative_eq!(
            &report.conditioned_cov,
            oracle.cov(),
            max_relative = 1e-9,
            epsilon = 1e-13
        );
        // and the Table-style conditioning of the unconstrained Gaussian
        let g = Gaussian::new(unconstrained, info.try_inverse().unwrap()).unwrap();
        let plane = LinearManifold::new(ca.transpose(), cb).unwrap();
        let cond = plane.condition(&g).unwrap();
        assert_relative_eq!(&report.solution, cond.mean(), max_relative = 1e-10);
    }

    #[test]
    fn starting_at_optimum_converges_immediately() {
        let (mut p, ..) = linear_problem();
        p.add_constraint(LinearConstraint {
            a: m(1, 3, &[1.0, -1.0, 2.0]),
            b: v(&[0.7]),
        });
        let first = solve_constrained_gn(&p, &v(&[0.0, 0.0, 0.0]), &GnOptions::default()).unwrap();
        let again = solve_constrained_gn(&p, &first.solution, &GnOptions::default()).unwrap();
        assert_eq!(again.iterations, 1);
        assert!(again.converged);
        assert!((again.solution - first.solution).amax() < 1e-10);
    }

    #[test]
    fn no_constraints_gives_laplace_covariance() {
        let info = m(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let cov = conditioned_cov_with_constraints(&info, &DMatrix::zeros(0, 2)).unwrap();
        assert_relative_eq!(cov, info.try_inverse().unwrap(), max_relative = 1e-12);
    }

    #[test]
    fn axis_constraint_covariance() {
        let cov = conditioned_cov_with_constraints(&DMatrix::identity(2, 2), &m(1, 2, &[0.0, 1.0]))
            .unwrap();
        assert_relative_eq!(cov, m(2, 2, &[1.0, 0.0, 0.0, 0.0]), epsilon = 1e-15);
    }

    #[test]
    fn dependent_constraints_are_singular() {
        let (mut p, ..) = linear_problem();
        for _ in 0..2 {
            p.add_constraint(LinearConstraint {
                a: m(1, 3, &[1.0, -1.0, 2.0]),
                b: v(&[0.7]),
            });
        }
        let err =
            solve_constrained_gn(&p, &v(&[0.0, 0.0, 0.0]), &GnOptions::default()).unwrap_err();
        assert_eq!(err, Error::Singular { name: "KKT matrix" });
    }

    #[test]
    fn non_finite_residuals_are_reported() {
        let mut p = NllsProblem::new(1);
        p.add_residual(LinearResidual {
            a: m(1, 1, &[1.0]),
            b: v(&[f64::NAN]),
            weight: m(1, 1, &[1.0]),
        })
        .unwrap();
        let err = solve_constrained_gn(&p, &v(&[0.0]), &GnOptions::default()).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
    }

    #[test]
    fn weight_must_be_positive_definite() {
        let mut p = NllsProblem::new(1);
        let err = p
            .add_residual(LinearResidual {
                a: m(1, 1, &[1.0]),
                b: v(&[0.0]),
                weight: m(1, 1, &[-1.0]),
            })
            .unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn mahalanobis_basics() {
        let (mut p, ..) = linear_problem();
        p.add_constraint(LinearConstraint {
            a: m(1, 3, &[1.0, -1.0, 2.0]),
            b: v(&[0.7]),
        });
        let report = solve_constrained_gn(&p, &v(&[0.0, 0.0, 0.0]), &GnOptions::default()).unwrap();
        let (basis, _) = nullspace_basis(&report.constraint_jacobian);
        assert_eq!(
            mahalanobis_consistency(&DVector::zeros(3), &report, &basis, 2).unwrap(),
            0.0
        );

        let e = &basis * v(&[0.3, -0.1]);
        let d = mahalanobis_consistency(&e, &report, &basis, 2).unwrap();
        // Sigma_t scaled by 4 means Lambda' scaled by 1/4
        let mut scaled = report.clone();
        scaled.unconstrained_info /= 4.0;
        let d_scaled = mahalanobis_consistency(&e, &scaled, &basis, 2).unwrap();
        assert_relative_eq!(d_scaled, d / 2.0, max_relative = 1e-12);

        // any basis of the same span gives the same value
        let other = &basis * m(2, 2, &[2.0, 1.0, -0.5, 3.0]);
        assert_relative_eq!(
            mahalanobis_consistency(&e, &report, &other, 2).unwrap(),
            d,
            max_relative = 1e-10
        );

        assert!(matches!(
            mahalanobis_consistency(&e, &report, &basis, 0),
            Err(Error::InvalidArgument(_))
        ));
    }
}
