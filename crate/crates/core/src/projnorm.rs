//! Projected normal distribution on the unit circle.
//!
//! The reference marginal of `theta = atan2(x2, x1)` for `x ~ N(mu, Sigma)` is computed
//! either in closed form or by Monte-Carlo histogramming. The approximation marginalizes
//! onto the tangent line at `mu / |mu|` and retracts by arc length.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::gaussian::Gaussian;
use crate::smooth::{marginalize_onto, retract_distribution, UnitCircleModel};

pub const DEFAULT_GRID_SIZE: usize = 2048;

/// Densities are floored at this value before taking logarithms.
pub const DENSITY_FLOOR: f64 = 1e-300;

pub const MIN_MC_SAMPLES: usize = 10_000;

/// A density over angles sampled on the uniform grid `theta_k = -pi + 2 pi k / K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircularDensity {
    grid: Vec<f64>,
    values: Vec<f64>,
}

pub fn angle_grid(size: usize) -> Vec<f64> {
    let step = 2.0 * PI / size as f64;
    (0..size).map(|k| -PI + k as f64 * step).collect()
}

impl CircularDensity {
    /// Normalizes `values` (given on [`angle_grid`]) to unit trapezoidal mass.
    pub fn normalized(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidArgument(
                "grid needs at least two points".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::NonFinite {
                context: "circular density values",
            });
        }
        let grid = angle_grid(values.len());
        let mass = values.iter().sum::<f64>() * (2.0 * PI / values.len() as f64);
        if mass.is_nan() || mass <= 0.0 {
            return Err(Error::InvalidArgument(
                "density has zero mass on the grid".into(),
            ));
        }
        let values = values.into_iter().map(|v| v / mass).collect();
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn spacing(&self) -> f64 {
        2.0 * PI / self.len() as f64
    }

    /// Periodic trapezoidal integral.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.spacing()
    }

    pub fn peak_angle(&self) -> f64 {
        let (k, _) =
            self.values
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (k, &v)| {
                    if v > best.1 {
                        (k, v)
                    } else {
                        best
                    }
                });
        self.grid[k]
    }

    fn check_same_grid(&self, other: &Self) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::InvalidArgument(format!(
                "grid mismatch: {} vs {} points",
                self.len(),
                other.len()
            )));
        }
        Ok(())
    }

    /// `1/2 * integral |p - q|`
    pub fn total_variation(&self, other: &Self) -> Result<f64> {
        self.check_same_grid(other)?;
        let l1: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .sum();
        Ok(0.5 * l1 * self.spacing())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceMethod {
    Analytical,
    MonteCarlo { samples: usize, seed: u64 },
}

fn check_planar(g: &Gaussian) -> Result<()> {
    if g.dim() != 2 {
        return Err(Error::DimensionMismatch {
            context: "projected normal gaussian",
            expected: 2,
            actual: g.dim(),
        });
    }
    if !g.is_full_rank() {
        return Err(Error::RankDeficientCovariance {
            rank: g.rank(),
            dim: 2,
        });
    }
    Ok(())
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Closed-form density of `atan2(x2, x1)` for a full-rank planar Gaussian.
///
/// Integrating the Gaussian along the ray `r u(theta)` with weight `r` gives
/// `[exp(-C/2) + sqrt(2 pi) D Phi(D) exp(-(C - D^2)/2)] / (2 pi A sqrt|Sigma|)`
/// with `A = u^T Sigma^-1 u`, `B = u^T Sigma^-1 mu`, `C = mu^T Sigma^-1 mu`, `D = B / sqrt(A)`.
pub fn projected_normal_pdf(mean: &Vector2<f64>, cov: &Matrix2<f64>, theta: f64) -> Result<f64> {
    let det = cov.determinant();
    let info = cov
        .try_inverse()
        .ok_or(Error::Singular { name: "covariance" })?;
    let u = Vector2::new(theta.cos(), theta.sin());
    let a = u.dot(&(info * u));
    let b = u.dot(&(info * mean));
    let c = mean.dot(&(info * mean));
    let d = b / a.sqrt();
    // C - D^2 >= 0 by Cauchy-Schwarz in the Sigma^-1 inner product
    let gap = (c - d * d).max(0.0);
    let radial = (-0.5 * c).exp() + (2.0 * PI).sqrt() * d * std_normal_cdf(d) * (-0.5 * gap).exp();
    Ok(radial / (2.0 * PI * a * det.sqrt()))
}

pub fn reference_density(
    g: &Gaussian,
    grid_size: usize,
    method: ReferenceMethod,
) -> Result<CircularDensity> {
    check_planar(g)?;
    if grid_size < 2 {
        return Err(Error::InvalidArgument(
            "grid_size must be at least 2".into(),
        ));
    }
    match method {
        ReferenceMethod::Analytical => {
            let mean = Vector2::new(g.mean()[0], g.mean()[1]);
            let cov = Matrix2::new(
                g.cov()[(0, 0)],
                g.cov()[(0, 1)],
                g.cov()[(1, 0)],
                g.cov()[(1, 1)],
            );
            let values = angle_grid(grid_size)
                .into_iter()
                .map(|t| projected_normal_pdf(&mean, &cov, t))
                .collect::<Result<Vec<_>>>()?;
            CircularDensity::normalized(values)
        }
        ReferenceMethod::MonteCarlo { samples, seed } => {
            if samples < MIN_MC_SAMPLES {
                return Err(Error::InvalidArgument(format!(
                    "monte carlo reference needs at least {MIN_MC_SAMPLES} samples, got {samples}"
                )));
            }
            let step = 2.0 * PI / grid_size as f64;
            let mut counts = vec![0.0f64; grid_size];
            for x in g.sample(samples, seed) {
                let theta = x[1].atan2(x[0]);
                // bins are centered on the grid points
                let k = ((theta + PI) / step + 0.5).floor() as usize % grid_size;
                counts[k] += 1.0;
            }
            CircularDensity::normalized(counts)
        }
    }
}

/// Tangent-line marginal at `mu / |mu|`, retracted onto the circle and renormalized.
pub fn approx_density(g: &Gaussian, grid_size: usize) -> Result<CircularDensity> {
    Ok(approx_with_tangent(g, grid_size)?.0)
}

fn approx_with_tangent(g: &Gaussian, grid_size: usize) -> Result<(CircularDensity, f64, f64)> {
    check_planar(g)?;
    let tg = marginalize_onto(&UnitCircleModel, g)?;
    let points: Vec<_> = angle_grid(grid_size)
        .into_iter()
        .map(UnitCircleModel::point_at)
        .collect();
    let values = retract_distribution(&tg, &UnitCircleModel, &points)?;
    let base = tg.base_point();
    let (_, cov_t) = tg.tangent_coordinates()?;
    Ok((
        CircularDensity::normalized(values)?,
        base[1].atan2(base[0]),
        cov_t[(0, 0)],
    ))
}

/// `D_KL(p || q)` by periodic trapezoidal quadrature, with both densities floored.
pub fn kl_divergence(p: &CircularDensity, q: &CircularDensity) -> Result<f64> {
    p.check_same_grid(q)?;
    let sum: f64 = p
        .values
        .iter()
        .zip(&q.values)
        .map(|(&a, &b)| {
            let a = a.max(DENSITY_FLOOR);
            let b = b.max(DENSITY_FLOOR);
            a * (a / b).ln()
        })
        .sum();
    Ok((sum * p.spacing()).max(0.0))
}

/// Settings for the covariance-scale sweep of the projected normal comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProjNormConfig {
    pub mean: [f64; 2],
    /// Isotropic covariance scales `s` in `Sigma = s I`.
    pub scales: Vec<f64>,
    pub grid_size: usize,
    /// Required ratio `kl[1] / kl[0]` between the two smallest scales.
    pub ratio_floor: f64,
    pub reference: ReferenceMethod,
}

impl Default for ProjNormConfig {
    fn default() -> Self {
        Self {
            mean: [1.25, 0.0],
            scales: vec![0.01, 0.05, 0.2],
            grid_size: DEFAULT_GRID_SIZE,
            ratio_floor: 2.0,
            reference: ReferenceMethod::Analytical,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProjNormRow {
    pub scale: f64,
    pub det_sigma: f64,
    /// Angle of the linearization point `mu / |mu|`.
    pub tangent_angle: f64,
    /// Variance of the tangent-line marginal.
    pub tangent_variance: f64,
    pub kl: f64,
    pub reference: CircularDensity,
    pub approx: CircularDensity,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProjNormReport {
    pub rows: Vec<ProjNormRow>,
}

impl ProjNormReport {
    pub fn kl_values(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.kl).collect()
    }

    /// Whether KL strictly increases along the configured scale order.
    pub fn kl_strictly_increasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].kl > w[0].kl)
    }
}

pub fn run_projnorm_experiment(config: &ProjNormConfig) -> Result<ProjNormReport> {
    if config.scales.is_empty() {
        return Err(Error::InvalidArgument(
            "at least one covariance scale is required".into(),
        ));
    }
    if let Some(bad) = config.scales.iter().find(|s| !s.is_finite() || **s <= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "covariance scale must be positive, got {bad}"
        )));
    }
    let mean = DVector::from_column_slice(&config.mean);
    let rows = config
        .scales
        .par_iter()
        .map(|&scale| {
            let g = Gaussian::new(mean.clone(), DMatrix::identity(2, 2) * scale)?;
            let reference = reference_density(&g, config.grid_size, config.reference)?;
            let (approx, tangent_angle, tangent_variance) =
                approx_with_tangent(&g, config.grid_size)?;
            let kl = kl_divergence(&reference, &approx)?;
            Ok(ProjNormRow {
                scale,
                det_sigma: g.cov().determinant(),
                tangent_angle,
                tangent_variance,
                kl,
                reference,
                approx,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ProjNormReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn planar(mean: [f64; 2], cov: [f64; 4]) -> Gaussian {
        Gaussian::from_slices(&mean, &cov).unwrap()
    }

    #[test]
    fn centered_isotropic_is_uniform() {
        let d = reference_density(
            &planar([0.0, 0.0], [1.0, 0.0, 0.0, 1.0]),
            256,
            ReferenceMethod::Analytical,
        )
        .unwrap();
        for v in d.values() {
            assert_relative_eq!(*v, 1.0 / (2.0 * PI), max_relative = 1e-12);
        }
    }

    #[test]
    fn closed_form_integrates_to_one_before_normalization() {
        let mean = Vector2::new(0.7, -0.4);
        let cov = Matrix2::new(0.3, 0.1, 0.1, 0.5);
        let k = 4096;
        let mass: f64 = angle_grid(k)
            .iter()
            .map(|&t| projected_normal_pdf(&mean, &cov, t).unwrap())
            .sum::<f64>()
            * (2.0 * PI / k as f64);
        assert_relative_eq!(mass, 1.0, max_relative = 1e-10);
    }

    #[test]
    fn symmetric_about_mean_axis() {
        let d = reference_density(
            &planar([2.0, 0.0], [0.04, 0.0, 0.0, 0.04]),
            512,
            ReferenceMethod::Analytical,
        )
        .unwrap();
        let n = d.len();
        // theta_k and theta_{n-k} are mirror images
        for k in 1..n / 2 {
            assert_relative_eq!(
                d.values()[k],
                d.values()[n - k],
                max_relative = 1e-9,
                epsilon = 1e-300
            );
        }
    }

    #[test]
    fn reference_validation() {
        let g = planar([1.0, 0.0], [0.1, 0.0, 0.0, 0.1]);
        let few = ReferenceMethod::MonteCarlo {
            samples: 100,
            seed: 1,
        };
        assert!(matches!(
            reference_density(&g, 64, few),
            Err(Error::InvalidArgument(_))
        ));
        let degenerate = planar([1.0, 0.0], [0.1, 0.0, 0.0, 0.0]);
        assert!(matches!(
            reference_density(&degenerate, 64, ReferenceMethod::Analytical),
            Err(Error::RankDeficientCovariance { .. })
        ));
        let three = Gaussian::isotropic(DVector::from_column_slice(&[1.0, 0.0, 0.0]), 0.1).unwrap();
        assert!(matches!(
            approx_density(&three, 64),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn approx_rejects_centered_mean() {
        let g = planar([0.0, 0.0], [0.1, 0.0, 0.0, 0.1]);
        assert_eq!(
            approx_density(&g, 64).unwrap_err(),
            Error::ProjectionUndefined
        );
    }

    #[test]
    fn approx_is_angular_normal_on_circle() {
        let sigma: f64 = 0.1;
        let d = approx_density(
            &planar([1.0, 0.0], [sigma * sigma, 0.0, 0.0, sigma * sigma]),
            2048,
        )
        .unwrap();
        for (t, v) in d.grid().iter().zip(d.values()) {
            let expected = (-(t * t) / (2.0 * sigma * sigma)).exp() / (2.0 * PI).sqrt() / sigma;
            assert!((v - expected).abs() < 1e-9, "theta {t}: {v} vs {expected}");
        }
    }

    #[test]
    fn approx_peaks_at_projected_mean() {
        let d = approx_density(&planar([-0.5, 0.9], [0.05, 0.01, 0.01, 0.03]), 4096).unwrap();
        let expected = 0.9f64.atan2(-0.5);
        assert!((d.peak_angle() - expected).abs() <= d.spacing());
    }

    #[test]
    fn radial_offset_leaves_tangent_variance() {
        let near = approx_with_tangent(&planar([1.0, 0.0], [0.02, 0.0, 0.0, 0.02]), 256).unwrap();
        let far = approx_with_tangent(&planar([2.0, 0.0], [0.02, 0.0, 0.0, 0.02]), 256).unwrap();
        assert_relative_eq!(near.2, far.2, epsilon = 1e-15);
        assert_relative_eq!(near.2, 0.02, epsilon = 1e-15);
        assert_eq!(near.0, far.0);
    }

    #[test]
    fn kl_properties() {
        let p = reference_density(
            &planar([1.0, 0.2], [0.1, 0.02, 0.02, 0.05]),
            512,
            ReferenceMethod::Analytical,
        )
        .unwrap();
        let q = approx_density(&planar([1.0, 0.2], [0.1, 0.02, 0.02, 0.05]), 512).unwrap();
        assert!(kl_divergence(&p, &p).unwrap().abs() < 1e-12);
        assert!(kl_divergence(&p, &q).unwrap() >= 0.0);
        assert!(kl_divergence(&q, &p).unwrap() >= 0.0);
        let coarse = approx_density(&planar([1.0, 0.2], [0.1, 0.02, 0.02, 0.05]), 256).unwrap();
        assert!(matches!(
            kl_divergence(&p, &coarse),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn densities_are_normalized() {
        for g in [
            planar([1.25, 0.0], [0.01, 0.0, 0.0, 0.01]),
            planar([0.3, -0.1], [0.4, 0.1, 0.1, 0.2]),
        ] {
            for d in [
                reference_density(&g, 1024, ReferenceMethod::Analytical).unwrap(),
                reference_density(
                    &g,
                    1024,
                    ReferenceMethod::MonteCarlo {
                        samples: 20_000,
                        seed: 4,
                    },
                )
                .unwrap(),
                approx_density(&g, 1024).unwrap(),
            ] {
                assert!((d.integral() - 1.0).abs() < 1e-3);
                assert!(d.values().iter().all(|v| *v >= 0.0));
            }
        }
    }

    #[test]
    fn unit_radius_mean_kl_grows_with_scale() {
        let config = ProjNormConfig {
            mean: [1.0, 0.0],
            ..ProjNormConfig::default()
        };
        let report = run_projnorm_experiment(&config).unwrap();
        let kl = report.kl_values();
        assert_eq!(kl.len(), 3);
        assert!(report.kl_strictly_increasing(), "{kl:?}");
        assert!(kl[1] / kl[0] >= config.ratio_floor, "{kl:?}");
    }

    #[test]
    fn default_experiment_values() {
        let report = run_projnorm_experiment(&ProjNormConfig::default()).unwrap();
        for row in &report.rows {
            println!("scale {} kl {:.6}", row.scale, row.kl);
        }
        assert_eq!(report.rows.len(), 3);
        assert!(report
            .kl_values()
            .iter()
            .all(|k| k.is_finite() && *k >= 0.0));
    }

    #[test]
    fn experiment_is_deterministic() {
        let config = ProjNormConfig {
            grid_size: 256,
            reference: ReferenceMethod::MonteCarlo {
                samples: 20_000,
                seed: 5,
            },
            ..ProjNormConfig::default()
        };
        assert_eq!(
            run_projnorm_experiment(&config).unwrap(),
            run_projnorm_experiment(&config).unwrap()
        );
    }
}
