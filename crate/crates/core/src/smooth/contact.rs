use nalgebra::{DMatrix, DVector, Vector2};

use super::ManifoldModel;
use crate::error::{Error, Result};

/// Planar poses `(t_x, t_y, phi)` of a box whose top edge touches a circular probe.
///
/// With `q = R(phi)^T (p - t)` the probe center in the box frame, the contact
/// constraint is `q_y - (h/2 + r) = 0`. Poses on the manifold are parametrized by a
/// revolute joint at the probe (`alpha = phi`) followed by a prismatic joint along
/// the edge (`d = q_x`): `t = p - R(alpha) [d, h/2 + r]^T`. The angle is kept unwrapped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactChainModel {
    probe: Vector2<f64>,
    standoff: f64,
}

impl ContactChainModel {
    /// `box_half_height` is `h/2`; `probe_radius` is `r`.
    pub fn new(probe: Vector2<f64>, box_half_height: f64, probe_radius: f64) -> Self {
        Self {
            probe,
            standoff: box_half_height + probe_radius,
        }
    }

    pub fn probe(&self) -> Vector2<f64> {
        self.probe
    }

    /// Distance from the box center to the probe center along the box-frame y axis.
    pub fn standoff(&self) -> f64 {
        self.standoff
    }

    /// Probe center expressed in the box frame.
    pub fn probe_in_box(&self, x: &DVector<f64>) -> Vector2<f64> {
        let (s, c) = x[2].sin_cos();
        let dx = self.probe.x - x[0];
        let dy = self.probe.y - x[1];
        Vector2::new(c * dx + s * dy, -s * dx + c * dy)
    }

    /// Contact offset `q_x` along the edge.
    pub fn contact_offset(&self, x: &DVector<f64>) -> f64 {
        self.probe_in_box(x).x
    }

    /// `d q_x / d x^T`
    pub fn contact_offset_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let (s, c) = x[2].sin_cos();
        let q = self.probe_in_box(x);
        DMatrix::from_row_slice(1, 3, &[-c, -s, q.y])
    }

    /// Joint coordinates `(alpha, d)` of a pose.
    pub fn chart(&self, x: &DVector<f64>) -> Vector2<f64> {
        Vector2::new(x[2], self.contact_offset(x))
    }

    /// Pose from joint coordinates.
    pub fn embed(&self, alpha: f64, d: f64) -> DVector<f64> {
        let (s, c) = alpha.sin_cos();
        let k = self.standoff;
        DVector::from_column_slice(&[
            self.probe.x - (c * d - s * k),
            self.probe.y - (s * d + c * k),
            alpha,
        ])
    }

    /// Columns `dh/dalpha` and `dh/dd` of the chart at `x`.
    pub fn chart_basis(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let joints = self.chart(x);
        let (alpha, d) = (joints.x, joints.y);
        let (s, c) = alpha.sin_cos();
        let k = self.standoff;
        DMatrix::from_row_slice(3, 2, &[s * d + c * k, -c, -c * d + s * k, -s, 1.0, 0.0])
    }

    fn chart_coordinates(
        &self,
        base: &DVector<f64>,
        tangent: &DVector<f64>,
    ) -> Result<Vector2<f64>> {
        let basis = self.chart_basis(base);
        let coords = (basis.transpose() * &basis)
            .cholesky()
            .ok_or(Error::Singular {
                name: "chart basis",
            })?
            .solve(&(basis.transpose() * tangent));
        Ok(Vector2::new(coords[0], coords[1]))
    }
}

impl ManifoldModel for ContactChainModel {
    fn ambient_dim(&self) -> usize {
        3
    }

    fn constraint_dim(&self) -> usize {
        1
    }

    fn constraint(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, self.probe_in_box(x).y - self.standoff)
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let (s, c) = x[2].sin_cos();
        let q = self.probe_in_box(x);
        DMatrix::from_row_slice(1, 3, &[s, -c, -q.x])
    }

    /// Slides the box along its own y axis until the edge touches the probe; orientation is kept.
    fn project(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != 3 || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::ProjectionUndefined);
        }
        let shift = self.probe_in_box(x).y - self.standoff;
        if shift == 0.0 {
            return Ok(x.clone());
        }
        let (s, c) = x[2].sin_cos();
        Ok(DVector::from_column_slice(&[
            x[0] - shift * s,
            x[1] + shift * c,
            x[2],
        ]))
    }

    fn retract(&self, base: &DVector<f64>, tangent: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_on_manifold(base)?;
        let joints = self.chart(base) + self.chart_coordinates(base, tangent)?;
        Ok(self.embed(joints.x, joints.y))
    }

    fn inverse_retract(&self, base: &DVector<f64>, point: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_on_manifold(base)?;
        self.check_on_manifold(point)?;
        let delta = self.chart(point) - self.chart(base);
        Ok(self.chart_basis(base) * DVector::from_column_slice(delta.as_slice()))
    }

    fn chart_radius(&self) -> f64 {
        std::f64::consts::PI
    }
}
