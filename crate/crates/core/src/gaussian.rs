//! Gaussian value type in covariance form, allowing rank-deficient covariances.
//!
//! Every constructor symmetrizes its covariance and records the numerical rank,
//! so degenerate results of marginalization and conditioning are first-class
//! values that can be sampled, transformed, and compared.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative eigenvalue threshold below which a covariance is rejected as non-PSD.
pub const PSD_TOLERANCE: f64 = 1e-10;

/// Eigenvalues above `RANK_TOLERANCE * max(lambda_max, 1)` count toward the rank.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// The random generator used by every stochastic routine in this crate.
///
/// ChaCha8 is portable and reproducible across platforms for a fixed seed.
pub type Rng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent child seed from a master seed and a stream index (SplitMix64).
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(stream.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Counts eigenvalues above the scale-aware rank threshold.
pub fn rank_from_eigenvalues(eigenvalues: &DVector<f64>) -> usize {
    let lambda_max = eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let threshold = RANK_TOLERANCE * lambda_max.max(1.0);
    eigenvalues.iter().filter(|&&l| l > threshold).count()
}

/// Numerical rank of a symmetric PSD matrix under the crate rank tolerance.
pub fn psd_rank(m: &DMatrix<f64>) -> usize {
    rank_from_eigenvalues(&SymmetricEigen::new(symmetrize(m)).eigenvalues)
}

/// Multivariate Gaussian `N(mean, cov)` with a possibly singular covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    rank: usize,
}

impl Gaussian {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if cov.nrows() != n || cov.ncols() != n {
            return Err(Error::DimensionMismatch {
                context: "covariance shape",
                expected: n,
                actual: if cov.nrows() != n {
                    cov.nrows()
                } else {
                    cov.ncols()
                },
            });
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "gaussian parameters",
            });
        }
        let cov = symmetrize(&cov);
        let eig = SymmetricEigen::new(cov.clone());
        let lambda_max = eig.eigenvalues.max();
        let lambda_min = eig.eigenvalues.min();
        if n > 0 && lambda_min < -PSD_TOLERANCE * lambda_max {
            return Err(Error::NotPositiveSemidefinite {
                min_eigenvalue: lambda_min,
                max_eigenvalue: lambda_max,
            });
        }
        let rank = rank_from_eigenvalues(&eig.eigenvalues);
        Ok(Self { mean, cov, rank })
    }

    pub fn from_slices(mean: &[f64], cov_row_major: &[f64]) -> Result<Self> {
        let n = mean.len();
        if cov_row_major.len() != n * n {
            return Err(Error::DimensionMismatch {
                context: "covariance entries",
                expected: n * n,
                actual: cov_row_major.len(),
            });
        }
        Self::new(
            DVector::from_column_slice(mean),
            DMatrix::from_row_slice(n, n, cov_row_major),
        )
    }

    /// Isotropic Gaussian `N(mean, variance * I)`.
    pub fn isotropic(mean: DVector<f64>, variance: f64) -> Result<Self> {
        let n = mean.len();
        Self::new(mean, DMatrix::identity(n, n) * variance)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn is_full_rank(&self) -> bool {
        self.rank == self.dim()
    }

    /// Factor `L` (n x rank) with `L L^T = cov`, from the rank-truncated eigendecomposition.
    pub fn sqrt_factor(&self) -> DMatrix<f64> {
        let eig = SymmetricEigen::new(self.cov.clone());
        let lambda_max = eig.eigenvalues.max();
        let threshold = RANK_TOLERANCE * lambda_max.max(1.0);
        let kept: Vec<usize> = (0..self.dim())
            .filter(|&i| eig.eigenvalues[i] > threshold)
            .collect();
        let mut factor = DMatrix::zeros(self.dim(), kept.len());
        for (col, &i) in kept.iter().enumerate() {
            let scale = eig.eigenvalues[i].sqrt();
            factor
                .column_mut(col)
                .copy_from(&(eig.eigenvectors.column(i) * scale));
        }
        factor
    }

    /// Draws `count` i.i.d. samples; deterministic for a given seed.
    pub fn sample(&self, count: usize, seed: u64) -> Vec<DVector<f64>> {
        let mut rng = rng_from_seed(seed);
        self.sample_with(count, &mut rng)
    }

    pub fn sample_with(&self, count: usize, rng: &mut Rng) -> Vec<DVector<f64>> {
        let factor = self.sqrt_factor();
        let k = factor.ncols();
        let mut z = DVector::zeros(k);
        (0..count)
            .map(|_| {
                for zi in z.iter_mut() {
                    *zi = StandardNormal.sample(rng);
                }
                &self.mean + &factor * &z
            })
            .collect()
    }

    /// Information form `(Sigma^-1 mu, Sigma^-1)`; only defined for full-rank covariances.
    pub fn info_form(&self) -> Result<(DVector<f64>, DMatrix<f64>)> {
        if !self.is_full_rank() {
            return Err(Error::RankDeficientCovariance {
                rank: self.rank,
                dim: self.dim(),
            });
        }
        let chol = self
            .cov
            .clone()
            .cholesky()
            .ok_or(Error::Singular { name: "covariance" })?;
        let info = symmetrize(&chol.inverse());
        let info_vec = chol.solve(&self.mean);
        Ok((info_vec, info))
    }

    /// Log-density of a full-rank Gaussian.
    pub fn log_pdf(&self, x: &DVector<f64>) -> Result<f64> {
        self.check_dim(x.len(), "log_pdf point")?;
        let chol = self
            .cov
            .clone()
            .cholesky()
            .ok_or(Error::RankDeficientCovariance {
                rank: self.rank,
                dim: self.dim(),
            })?;
        let diff = x - &self.mean;
        let maha = diff.dot(&chol.solve(&diff));
        let log_det: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
        let n = self.dim() as f64;
        Ok(-0.5 * (n * (2.0 * std::f64::consts::PI).ln() + log_det + maha))
    }

    pub fn transform(&self, frame: &FrameTransform, direction: FrameDirection) -> Result<Self> {
        self.check_dim(frame.dim(), "frame transform")?;
        let map = match direction {
            FrameDirection::ToZ => &frame.h_inv,
            FrameDirection::ToX => &frame.h,
        };
        let mean = map * &self.mean;
        let cov = symmetrize(&(map * &self.cov * map.transpose()));
        // An invertible map cannot change the rank; keep it rather than re-deriving it
        // from eigenvalues that the map may have rescaled across the threshold.
        Ok(Self {
            mean,
            cov,
            rank: self.rank,
        })
    }

    pub(crate) fn check_dim(&self, actual: usize, context: &'static str) -> Result<()> {
        if actual != self.dim() {
            return Err(Error::DimensionMismatch {
                context,
                expected: self.dim(),
                actual,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameDirection {
    /// `z = H^-1 x`
    ToZ,
    /// `x = H z`
    ToX,
}

/// Invertible linear change of coordinates `x = H z`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTransform {
    h: DMatrix<f64>,
    h_inv: DMatrix<f64>,
}

impl FrameTransform {
    pub fn new(h: DMatrix<f64>) -> Result<Self> {
        if !h.is_square() {
            return Err(Error::DimensionMismatch {
                context: "frame transform shape",
                expected: h.nrows(),
                actual: h.ncols(),
            });
        }
        let n = h.nrows();
        let h_inv = h
            .clone()
            .lu()
            .try_inverse()
            .ok_or(Error::NonInvertibleTransform)?;
        let residual = (&h * &h_inv - DMatrix::<f64>::identity(n, n)).amax();
        if !residual.is_finite() || residual > 1e-10 * h.norm().max(1.0) {
            return Err(Error::NonInvertibleTransform);
        }
        Ok(Self { h, h_inv })
    }

    pub fn dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.h_inv
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn identity_has_full_rank() {
        let g = Gaussian::new(v(&[0.0, 0.0]), DMatrix::identity(2, 2)).unwrap();
        assert_eq!(g.rank(), 2);
    }

    #[test]
    fn zero_variance_direction_drops_rank() {
        let g = Gaussian::from_slices(&[1.0, 2.0], &[1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(g.rank(), 1);
    }

    #[test]
    fn negative_variance_rejected() {
        let err = Gaussian::from_slices(&[0.0], &[-1.0]).unwrap_err();
        assert!(matches!(err, Error::NotPositiveSemidefinite { .. }));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let err = Gaussian::new(v(&[0.0, 0.0]), DMatrix::identity(3, 3)).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn asymmetric_input_is_symmetrized() {
        let g = Gaussian::from_slices(&[0.0, 0.0], &[2.0, 0.4, 0.0, 1.0]).unwrap();
        assert_eq!(g.cov()[(0, 1)], 0.2);
        assert_eq!(g.cov()[(1, 0)], 0.2);
    }

    #[test]
    fn tiny_covariance_counts_as_rank_zero() {
        // rank threshold never drops below 1e-10 in absolute terms
        let g = Gaussian::isotropic(v(&[0.0, 0.0]), 1e-12).unwrap();
        assert_eq!(g.rank(), 0);
    }

    #[test]
    fn sample_mean_converges() {
        let g = Gaussian::isotropic(v(&[0.0, 0.0]), 1.0).unwrap();
        let draws = g.sample(100_000, 11);
        let mean = draws.iter().fold(DVector::zeros(2), |acc, x| acc + x) / draws.len() as f64;
        // 4 sigma / sqrt(count) is about 0.0126
        assert!(mean.amax() < 0.02, "mean {mean}");
    }

    #[test]
    fn degenerate_direction_is_never_sampled() {
        let g = Gaussian::from_slices(&[1.0, 2.0], &[1.0, 0.0, 0.0, 0.0]).unwrap();
        for x in g.sample(1000, 3) {
            assert_eq!(x[1], 2.0);
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let g = Gaussian::from_slices(&[0.0, 1.0], &[2.0, 0.3, 0.3, 1.0]).unwrap();
        assert_eq!(g.sample(50, 9), g.sample(50, 9));
        assert_ne!(g.sample(50, 9), g.sample(50, 10));
    }

    #[test]
    fn identity_transform_is_noop() {
        let g = Gaussian::from_slices(&[1.0, -2.0], &[2.0, 0.3, 0.3, 1.0]).unwrap();
        let t = FrameTransform::new(DMatrix::identity(2, 2)).unwrap();
        assert_eq!(g.transform(&t, FrameDirection::ToZ).unwrap(), g);
    }

    #[test]
    fn scaling_transform() {
        let g = Gaussian::isotropic(v(&[1.0, 0.0]), 1.0).unwrap();
        let t = FrameTransform::new(DMatrix::identity(2, 2) * 2.0).unwrap();
        let z = g.transform(&t, FrameDirection::ToZ).unwrap();
        assert_relative_eq!(z.mean(), &v(&[0.5, 0.0]), epsilon = 1e-15);
        assert_relative_eq!(z.cov(), &(DMatrix::identity(2, 2) * 0.25), epsilon = 1e-15);
    }

    #[test]
    fn transform_round_trip() {
        let g = Gaussian::from_slices(
            &[1.0, -2.0, 0.5],
            &[2.0, 0.3, 0.0, 0.3, 1.0, 0.1, 0.0, 0.1, 0.5],
        )
        .unwrap();
        let h = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 0.0, 0.0, 1.0, -1.0, 3.0, 0.0, 1.0]);
        let t = FrameTransform::new(h).unwrap();
        let back = g
            .transform(&t, FrameDirection::ToZ)
            .unwrap()
            .transform(&t, FrameDirection::ToX)
            .unwrap();
        assert_relative_eq!(back.mean(), g.mean(), epsilon = 1e-10);
        assert_relative_eq!(back.cov(), g.cov(), epsilon = 1e-10);
        assert_eq!(back.rank(), g.rank());
    }

    #[test]
    fn singular_frame_rejected() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert_eq!(
            FrameTransform::new(h).unwrap_err(),
            Error::NonInvertibleTransform
        );
    }

    #[test]
    fn info_form_scalar() {
        let g = Gaussian::from_slices(&[2.0], &[4.0]).unwrap();
        let (eta, lambda) = g.info_form().unwrap();
        assert_relative_eq!(eta[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(lambda[(0, 0)], 0.25, epsilon = 1e-15);
    }

    #[test]
    fn info_form_identity() {
        let g = Gaussian::isotropic(v(&[0.0, 0.0]), 1.0).unwrap();
        let (eta, lambda) = g.info_form().unwrap();
        assert_eq!(eta, v(&[0.0, 0.0]));
        assert_relative_eq!(lambda, DMatrix::identity(2, 2), epsilon = 1e-15);
    }

    #[test]
    fn info_form_rejects_degenerate() {
        let g = Gaussian::from_slices(&[1.0, 0.0], &[1.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(matches!(
            g.info_form().unwrap_err(),
            Error::RankDeficientCovariance { rank: 1, dim: 2 }
        ));
    }

    #[test]
    fn derived_seeds_differ() {
        let a = derive_seed(7, 0);
        let b = derive_seed(7, 1);
        let c = derive_seed(8, 0);
        assert!(a != b && a != c && b != c);
        assert_eq!(a, derive_seed(7, 0));
    }
}
