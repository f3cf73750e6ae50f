//! Gaussian inference onto smooth nonlinear manifolds `f(x) = 0` by linearization.
//!
//! The mean is projected onto the manifold, the tangent plane at that point is
//! treated as a [`LinearManifold`], and the resulting degenerate Gaussian is carried
//! back onto the manifold through a retraction chart.

mod circle;
mod contact;

pub use circle::UnitCircleModel;
pub use contact::ContactChainModel;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gaussian::{symmetrize, Gaussian};
use crate::linear::{nullspace_basis, LinearManifold};

/// Default tolerance on `|f(x)|` for a point to count as on the manifold.
pub const ON_MANIFOLD_TOLERANCE: f64 = 1e-8;

/// A smooth manifold `f(x) = 0` embedded in `R^n`, with a projection and a retraction chart.
///
/// Tangent vectors are ambient `n`-vectors lying in the tangent plane at the base point.
pub trait ManifoldModel {
    fn ambient_dim(&self) -> usize;

    /// Number of scalar constraints, i.e. the length of `f(x)`.
    fn constraint_dim(&self) -> usize;

    fn manifold_dim(&self) -> usize {
        self.ambient_dim() - self.constraint_dim()
    }

    /// Constraint residual `f(x)`.
    fn constraint(&self, x: &DVector<f64>) -> DVector<f64>;

    /// `df/dx^T`, of shape `constraint_dim x ambient_dim`.
    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64>;

    /// Manifold-specific projection onto `f = 0`. Must leave on-manifold points unchanged.
    fn project(&self, x: &DVector<f64>) -> Result<DVector<f64>>;

    fn retract(&self, base: &DVector<f64>, tangent: &DVector<f64>) -> Result<DVector<f64>>;

    fn inverse_retract(&self, base: &DVector<f64>, point: &DVector<f64>) -> Result<DVector<f64>>;

    /// Largest tangent norm for which the chart is used.
    fn chart_radius(&self) -> f64;

    /// `|det dt/ds|` for the chart at `base`, evaluated at the tangent vector `tangent`:
    /// the factor converting a tangent-coordinate density into a density with respect to
    /// the manifold's own volume measure.
    ///
    /// The default differentiates the retraction numerically in orthonormal tangent
    /// coordinates and returns `1 / sqrt(det(J^T J))`.
    fn volume_factor(&self, base: &DVector<f64>, tangent: &DVector<f64>) -> Result<f64> {
        let (basis, _) = nullspace_basis(&self.jacobian(base));
        let k = basis.ncols();
        let coords = basis.transpose() * tangent;
        let step = 1e-6 * (1.0 + coords.norm());
        let mut jac = DMatrix::zeros(self.ambient_dim(), k);
        for i in 0..k {
            let mut plus = coords.clone();
            plus[i] += step;
            let mut minus = coords.clone();
            minus[i] -= step;
            let fwd = self.retract(base, &(&basis * plus))?;
            let bwd = self.retract(base, &(&basis * minus))?;
            jac.column_mut(i).copy_from(&((fwd - bwd) / (2.0 * step)));
        }
        let gram = (jac.transpose() * jac).determinant();
        if gram <= 0.0 || !gram.is_finite() {
            return Err(Error::Singular {
                name: "retraction Jacobian",
            });
        }
        Ok(1.0 / gram.sqrt())
    }

    /// Checks `|f(x)|_inf` against [`ON_MANIFOLD_TOLERANCE`].
    fn check_on_manifold(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.ambient_dim() {
            return Err(Error::DimensionMismatch {
                context: "manifold point",
                expected: self.ambient_dim(),
                actual: x.len(),
            });
        }
        let residual = self.constraint(x).amax();
        if residual.is_nan() || residual > ON_MANIFOLD_TOLERANCE {
            return Err(Error::OffManifold { residual });
        }
        Ok(())
    }
}

/// A Gaussian supported on the tangent plane of a manifold at `base_point`.
#[derive(Debug, Clone)]
pub struct TangentGaussian {
    base_point: DVector<f64>,
    plane: LinearManifold,
    gauss: Gaussian,
}

impl TangentGaussian {
    pub fn base_point(&self) -> &DVector<f64> {
        &self.base_point
    }

    pub fn plane(&self) -> &LinearManifold {
        &self.plane
    }

    pub fn gaussian(&self) -> &Gaussian {
        &self.gauss
    }

    /// The plane's nullspace basis; columns span the tangent directions.
    pub fn tangent_basis(&self) -> &DMatrix<f64> {
        self.plane.nullspace()
    }

    /// Mean and covariance expressed in the coordinates of [`Self::tangent_basis`],
    /// relative to the base point.
    pub fn tangent_coordinates(&self) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let basis = self.tangent_basis();
        let pinv = (basis.transpose() * basis)
            .cholesky()
            .ok_or(Error::Singular { name: "N^T N" })?
            .solve(&basis.transpose());
        let mean = &pinv * (self.gauss.mean() - &self.base_point);
        let cov = symmetrize(&(&pinv * self.gauss.cov() * pinv.transpose()));
        Ok((mean, cov))
    }
}

/// Projects the mean onto the manifold and returns the tangent plane there with the base point.
pub fn linearize_at_mean<M: ManifoldModel + ?Sized>(
    model: &M,
    g: &Gaussian,
) -> Result<(LinearManifold, DVector<f64>)> {
    if g.dim() != model.ambient_dim() {
        return Err(Error::DimensionMismatch {
            context: "gaussian vs manifold ambient dimension",
            expected: model.ambient_dim(),
            actual: g.dim(),
        });
    }
    let base = model.project(g.mean())?;
    model.check_on_manifold(&base)?;
    let s = model.jacobian(&base).transpose();
    let c = s.transpose() * &base;
    let plane = LinearManifold::new(s, c).map_err(|e| match e {
        Error::RankDeficientMatrix { rank, required, .. } => Error::RankDeficientMatrix {
            name: "constraint Jacobian",
            rank,
            required,
        },
        other => other,
    })?;
    Ok((plane, base))
}

pub fn marginalize_onto<M: ManifoldModel + ?Sized>(
    model: &M,
    g: &Gaussian,
) -> Result<TangentGaussian> {
    let (plane, base_point) = linearize_at_mean(model, g)?;
    let gauss = plane.marginalize(g)?;
    Ok(TangentGaussian {
        base_point,
        plane,
        gauss,
    })
}

pub fn condition_onto<M: ManifoldModel + ?Sized>(
    model: &M,
    g: &Gaussian,
) -> Result<TangentGaussian> {
    let (plane, base_point) = linearize_at_mean(model, g)?;
    let gauss = plane.condition(g)?;
    Ok(TangentGaussian {
        base_point,
        plane,
        gauss,
    })
}

/// Density of the retracted tangent Gaussian at each on-manifold query point, with respect
/// to the manifold's volume measure.
pub fn retract_distribution<M: ManifoldModel + ?Sized>(
    tg: &TangentGaussian,
    model: &M,
    query_points: &[DVector<f64>],
) -> Result<Vec<f64>> {
    let (mean_t, cov_t) = tg.tangent_coordinates()?;
    let k = mean_t.len();
    let chol = cov_t
        .clone()
        .cholesky()
        .ok_or(Error::RankDeficientCovariance {
            rank: tg.gauss.rank(),
            dim: k,
        })?;
    let log_det: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    let log_norm = -0.5 * (k as f64 * (2.0 * std::f64::consts::PI).ln() + log_det);
    let basis = tg.tangent_basis();
    let pinv = (basis.transpose() * basis)
        .cholesky()
        .ok_or(Error::Singular { name: "N^T N" })?
        .solve(&basis.transpose());
    let radius = model.chart_radius();

    query_points
        .iter()
        .map(|p| {
            model.check_on_manifold(p)?;
            let tangent = model.inverse_retract(&tg.base_point, p)?;
            let distance = tangent.norm();
            if distance > radius {
                return Err(Error::OutsideChart { distance, radius });
            }
            let diff = &pinv * &tangent - &mean_t;
            let maha = diff.dot(&chol.solve(&diff));
            let factor = model.volume_factor(&tg.base_point, &tangent)?;
            Ok((log_norm - 0.5 * maha).exp() * factor)
        })
        .collect()
}

/// Central finite-difference Jacobian of `f` at `x`.
pub fn finite_difference_jacobian<F>(f: F, x: &DVector<f64>, step: f64) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let rows = f(x).len();
    let mut jac = DMatrix::zeros(rows, x.len());
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus[i] += step;
        let mut minus = x.clone();
        minus[i] -= step;
        jac.column_mut(i)
            .copy_from(&((f(&plus) - f(&minus)) / (2.0 * step)));
    }
    jac
}
