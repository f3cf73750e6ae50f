use nalgebra::{DMatrix, DVector};

use super::ManifoldModel;
use crate::error::{Error, Result};

/// The unit circle `x1^2 + x2^2 = 1` with the arc-length (exponential-map) retraction.
///
/// Tangent coordinates equal signed arc length, so the chart has unit volume factor.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UnitCircleModel;

impl UnitCircleModel {
    /// Unit tangent at `p`, pointing in the direction of increasing angle.
    pub fn tangent_direction(p: &DVector<f64>) -> DVector<f64> {
        DVector::from_column_slice(&[-p[1], p[0]])
    }

    pub fn point_at(theta: f64) -> DVector<f64> {
        DVector::from_column_slice(&[theta.cos(), theta.sin()])
    }
}

impl ManifoldModel for UnitCircleModel {
    fn ambient_dim(&self) -> usize {
        2
    }

    fn constraint_dim(&self) -> usize {
        1
    }

    fn constraint(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, x[0] * x[0] + x[1] * x[1] - 1.0)
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_row_slice(1, 2, &[2.0 * x[0], 2.0 * x[1]])
    }

    /// Radial normalization, the Euclidean-closest point on the circle.
    fn project(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let norm = x.norm();
        if !norm.is_finite() || norm <= 1e-12 {
            return Err(Error::ProjectionUndefined);
        }
        // Points already on the circle are returned untouched rather than renormalized.
        if (norm * norm - 1.0).abs() <= f64::EPSILON {
            return Ok(x.clone());
        }
        Ok(x / norm)
    }

    fn retract(&self, base: &DVector<f64>, tangent: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_on_manifold(base)?;
        let arc = Self::tangent_direction(base).dot(tangent);
        let (s, c) = arc.sin_cos();
        Ok(DVector::from_column_slice(&[
            c * base[0] - s * base[1],
            s * base[0] + c * base[1],
        ]))
    }

    fn inverse_retract(&self, base: &DVector<f64>, point: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_on_manifold(base)?;
        self.check_on_manifold(point)?;
        let cross = base[0] * point[1] - base[1] * point[0];
        let dot = base.dot(point);
        Ok(Self::tangent_direction(base) * cross.atan2(dot))
    }

    fn chart_radius(&self) -> f64 {
        std::f64::consts::PI
    }

    fn volume_factor(&self, _base: &DVector<f64>, _tangent: &DVector<f64>) -> Result<f64> {
        Ok(1.0)
    }
}
