//! Marginalization and conditioning of Gaussians onto linear manifolds `S^T x = c`.
//!
//! The general closed forms work for any full-column-rank `S`. The axis-aligned
//! forms (`x_beta = beta`) and the KKT route are kept alongside as independent
//! references: the general forms must agree with both.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gaussian::{symmetrize, FrameDirection, FrameTransform, Gaussian};

/// Relative singular-value threshold for deciding the rank of a constraint matrix.
pub const CONSTRAINT_RANK_TOLERANCE: f64 = 1e-10;

/// Orthonormal basis of the nullspace of `a` (rows are constraints) together with `rank(a)`.
///
/// Uses the SVD of `a` padded with zero rows to a square matrix so the full set of
/// right singular vectors is available.
pub fn nullspace_basis(a: &DMatrix<f64>) -> (DMatrix<f64>, usize) {
    let (m, n) = a.shape();
    if m == 0 {
        return (DMatrix::identity(n, n), 0);
    }
    let rows = m.max(n);
    let mut padded = DMatrix::zeros(rows, n);
    padded.rows_mut(0, m).copy_from(a);
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let sigma_max = svd.singular_values[order[0]];
    let rank = order
        .iter()
        .filter(|&&i| svd.singular_values[i] > CONSTRAINT_RANK_TOLERANCE * sigma_max)
        .count();
    let mut basis = DMatrix::zeros(n, n - rank);
    for (col, &i) in order[rank..].iter().enumerate() {
        basis.column_mut(col).copy_from(&v_t.row(i).transpose());
    }
    (basis, rank)
}

/// Numerical column rank of `m`.
pub fn column_rank(m: &DMatrix<f64>) -> usize {
    if m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().singular_values();
    let max = sv.max();
    sv.iter()
        .filter(|&&s| s > CONSTRAINT_RANK_TOLERANCE * max)
        .count()
}

/// The linear manifold `S^T x = c` with cached nullspace basis, projector, and foot point.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearManifold {
    s: DMatrix<f64>,
    c: DVector<f64>,
    basis: DMatrix<f64>,
    projector: DMatrix<f64>,
    foot: DVector<f64>,
}

impl LinearManifold {
    /// Builds the manifold from an `n x m` constraint matrix `S` and offset `c`.
    pub fn new(s: DMatrix<f64>, c: DVector<f64>) -> Result<Self> {
        Self::check_shapes(&s, &c)?;
        let (basis, rank) = nullspace_basis(&s.transpose());
        if rank < s.ncols() {
            return Err(Error::RankDeficientMatrix {
                name: "S",
                rank,
                required: s.ncols(),
            });
        }
        Self::assemble(s, c, basis)
    }

    /// Builds the manifold with a caller-supplied (not necessarily orthonormal) nullspace basis.
    pub fn with_nullspace_basis(
        s: DMatrix<f64>,
        c: DVector<f64>,
        basis: DMatrix<f64>,
    ) -> Result<Self> {
        Self::check_shapes(&s, &c)?;
        let (n, m) = s.shape();
        if column_rank(&s) < m {
            return Err(Error::RankDeficientMatrix {
                name: "S",
                rank: column_rank(&s),
                required: m,
            });
        }
        if basis.nrows() != n || basis.ncols() != n - m {
            return Err(Error::DimensionMismatch {
                context: "nullspace basis columns",
                expected: n - m,
                actual: basis.ncols(),
            });
        }
        if column_rank(&basis) < n - m {
            return Err(Error::RankDeficientMatrix {
                name: "N",
                rank: column_rank(&basis),
                required: n - m,
            });
        }
        let leak = (s.transpose() * &basis).amax();
        if leak > 1e-10 * s.norm() * basis.norm() {
            return Err(Error::InvalidArgument(format!(
                "basis is not in null(S^T): |S^T N| = {leak:.3e}"
            )));
        }
        Self::assemble(s, c, basis)
    }

    /// Axis-aligned manifold `x[n_alpha..] = beta`, encoded as `S = [0; I]`, `c = beta`.
    pub fn axis_aligned(dim: usize, beta: &DVector<f64>) -> Result<Self> {
        let m = beta.len();
        if m == 0 || m >= dim {
            return Err(Error::InvalidConstraintCount {
                constraints: m,
                dim,
            });
        }
        let mut s = DMatrix::zeros(dim, m);
        s.view_mut((dim - m, 0), (m, m)).fill_with_identity();
        Self::new(s, beta.clone())
    }

    fn check_shapes(s: &DMatrix<f64>, c: &DVector<f64>) -> Result<()> {
        let (n, m) = s.shape();
        if m == 0 || m >= n {
            return Err(Error::InvalidConstraintCount {
                constraints: m,
                dim: n,
            });
        }
        if c.len() != m {
            return Err(Error::DimensionMismatch {
                context: "constraint offset c",
                expected: m,
                actual: c.len(),
            });
        }
        if s.iter().chain(c.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "linear manifold",
            });
        }
        Ok(())
    }

    fn assemble(s: DMatrix<f64>, c: DVector<f64>, basis: DMatrix<f64>) -> Result<Self> {
        // General forms: the basis need not be orthonormal.
        let gram_n = (basis.transpose() * &basis)
            .cholesky()
            .ok_or(Error::Singular { name: "N^T N" })?;
        let projector = symmetrize(&(&basis * gram_n.solve(&basis.transpose())));
        let gram_s = (s.transpose() * &s)
            .cholesky()
            .ok_or(Error::Singular { name: "S^T S" })?;
        let foot = &s * gram_s.solve(&c);
        Ok(Self {
            s,
            c,
            basis,
            projector,
            foot,
        })
    }

    pub fn dim(&self) -> usize {
        self.s.nrows()
    }

    pub fn constraint_count(&self) -> usize {
        self.s.ncols()
    }

    /// Dimension of the manifold itself, `n - m`.
    pub fn manifold_dim(&self) -> usize {
        self.dim() - self.constraint_count()
    }

    pub fn constraint_matrix(&self) -> &DMatrix<f64> {
        &self.s
    }

    pub fn offset(&self) -> &DVector<f64> {
        &self.c
    }

    pub fn nullspace(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn projector(&self) -> &DMatrix<f64> {
        &self.projector
    }

    pub fn foot_point(&self) -> &DVector<f64> {
        &self.foot
    }

    /// `S^T x - c`
    pub fn residual(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(x.len(), "manifold residual point")?;
        Ok(self.s.transpose() * x - &self.c)
    }

    /// Euclidean-closest point on the manifold, `Pi x + x0`.
    pub fn project_point(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(x.len(), "projected point")?;
        Ok(&self.projector * x + &self.foot)
    }

    /// `H = [N S]`, the frame in which this manifold becomes `z_beta = (S^T S)^-1 c`.
    pub fn frame_transform(&self) -> Result<FrameTransform> {
        let (n, m) = self.s.shape();
        let mut h = DMatrix::zeros(n, n);
        h.columns_mut(0, n - m).copy_from(&self.basis);
        h.columns_mut(n - m, m).copy_from(&self.s);
        FrameTransform::new(h)
    }

    /// The manifold's offset in the axis-aligned frame, `(S^T S)^-1 c`.
    pub fn axis_frame_offset(&self) -> Result<DVector<f64>> {
        let gram_s = (self.s.transpose() * &self.s)
            .cholesky()
            .ok_or(Error::Singular { name: "S^T S" })?;
        Ok(gram_s.solve(&self.c))
    }

    /// Marginal `N(Pi mu + x0, Pi Sigma Pi^T)`; accepts rank-deficient input.
    pub fn marginalize(&self, g: &Gaussian) -> Result<Gaussian> {
        self.check_dim(g.dim(), "marginalized gaussian")?;
        let mean = &self.projector * g.mean() + &self.foot;
        let cov = &self.projector * g.cov() * self.projector.transpose();
        Gaussian::new(mean, cov)
    }

    /// Conditional `N(x0 + Sigma_c Sigma^-1 (mu - x0), N (N^T Sigma^-1 N)^-1 N^T)`.
    pub fn condition(&self, g: &Gaussian) -> Result<Gaussian> {
        self.check_dim(g.dim(), "conditioned gaussian")?;
        if !g.is_full_rank() {
            return Err(Error::RankDeficientCovariance {
                rank: g.rank(),
                dim: g.dim(),
            });
        }
        let info = symmetrize(
            &g.cov()
                .clone()
                .cholesky()
                .ok_or(Error::Singular { name: "covariance" })?
                .inverse(),
        );
        let cov = conditioned_cov_from_info(&info, &self.basis)?;
        let mean = &self.foot + &cov * (&info * (g.mean() - &self.foot));
        Gaussian::new(mean, cov)
    }

    fn check_dim(&self, actual: usize, context: &'static str) -> Result<()> {
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

/// `N (N^T Lambda N)^-1 N^T` for an information matrix `Lambda`; never inverts `Lambda` itself.
pub fn conditioned_cov_from_info(
    info: &DMatrix<f64>,
    basis: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    if basis.ncols() == 0 {
        return Ok(DMatrix::zeros(info.nrows(), info.nrows()));
    }
    let reduced = symmetrize(&(basis.transpose() * info * basis));
    let chol = reduced.cholesky().ok_or(Error::Singular {
        name: "N^T Lambda N",
    })?;
    Ok(symmetrize(&(basis * chol.solve(&basis.transpose()))))
}

/// Conditions through the inverse of the KKT matrix `[[Lambda, S], [S^T, 0]]`.
///
/// The covariance is the top-left `n x n` block of the inverse; the mean solves
/// `min (x - mu)^T Lambda (x - mu)` subject to `S^T x = c`.
pub fn condition_via_kkt(
    info: &DMatrix<f64>,
    s: &DMatrix<f64>,
    mean: &DVector<f64>,
    c: &DVector<f64>,
) -> Result<Gaussian> {
    let n = info.nrows();
    let m = s.ncols();
    if !info.is_square() || s.nrows() != n || mean.len() != n || c.len() != m {
        return Err(Error::DimensionMismatch {
            context: "KKT blocks",
            expected: n,
            actual: if s.nrows() != n {
                s.nrows()
            } else {
                mean.len()
            },
        });
    }
    let kkt = kkt_matrix(info, s);
    check_nonsingular(&kkt, "KKT matrix")?;
    let lu = kkt.clone().lu();
    let inverse = lu
        .try_inverse()
        .ok_or(Error::Singular { name: "KKT matrix" })?;
    let cov = symmetrize(&inverse.view((0, 0), (n, n)).into_owned());
    let mut rhs = DVector::zeros(n + m);
    rhs.rows_mut(0, n).copy_from(&(info * mean));
    rhs.rows_mut(n, m).copy_from(c);
    let sol = kkt
        .lu()
        .solve(&rhs)
        .ok_or(Error::Singular { name: "KKT matrix" })?;
    Gaussian::new(sol.rows(0, n).into_owned(), cov)
}

/// `[[top_left, S], [S^T, 0]]`
pub fn kkt_matrix(top_left: &DMatrix<f64>, s: &DMatrix<f64>) -> DMatrix<f64> {
    let n = top_left.nrows();
    let m = s.ncols();
    let mut kkt = DMatrix::zeros(n + m, n + m);
    kkt.view_mut((0, 0), (n, n)).copy_from(top_left);
    kkt.view_mut((0, n), (n, m)).copy_from(s);
    kkt.view_mut((n, 0), (m, n)).copy_from(&s.transpose());
    kkt
}

pub(crate) fn check_nonsingular(m: &DMatrix<f64>, name: &'static str) -> Result<()> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context: name });
    }
    let sv = m.clone().singular_values();
    let max = sv.max();
    if max == 0.0 || sv.min() <= 1e-13 * max {
        return Err(Error::Singular { name });
    }
    Ok(())
}

fn check_split(g: &Gaussian, n_alpha: usize, beta: &DVector<f64>) -> Result<()> {
    let n = g.dim();
    if n_alpha == 0 || n_alpha >= n {
        return Err(Error::SplitOutOfRange {
            split: n_alpha,
            dim: n,
        });
    }
    if beta.len() != n - n_alpha {
        return Err(Error::DimensionMismatch {
            context: "axis value beta",
            expected: n - n_alpha,
            actual: beta.len(),
        });
    }
    Ok(())
}

fn pad(alpha_mean: DVector<f64>, beta: &DVector<f64>, alpha_cov: DMatrix<f64>) -> Result<Gaussian> {
    let a = alpha_mean.len();
    let n = a + beta.len();
    let mut mean = DVector::zeros(n);
    mean.rows_mut(0, a).copy_from(&alpha_mean);
    mean.rows_mut(a, beta.len()).copy_from(beta);
    let mut cov = DMatrix::zeros(n, n);
    cov.view_mut((0, 0), (a, a)).copy_from(&alpha_cov);
    Gaussian::new(mean, cov)
}

/// Padded marginal onto `x_beta = beta`: mean `[mu_alpha; beta]`, covariance `diag(Sigma_aa, 0)`.
pub fn axis_marginalize(g: &Gaussian, n_alpha: usize, beta: &DVector<f64>) -> Result<Gaussian> {
    check_split(g, n_alpha, beta)?;
    let mean_a = g.mean().rows(0, n_alpha).into_owned();
    let cov_aa = g.cov().view((0, 0), (n_alpha, n_alpha)).into_owned();
    pad(mean_a, beta, cov_aa)
}

/// Padded conditional on `x_beta = beta` via the Schur complement of `Sigma_bb`.
pub fn axis_condition(g: &Gaussian, n_alpha: usize, beta: &DVector<f64>) -> Result<Gaussian> {
    check_split(g, n_alpha, beta)?;
    let n = g.dim();
    let nb = n - n_alpha;
    let mu_a = g.mean().rows(0, n_alpha);
    let mu_b = g.mean().rows(n_alpha, nb);
    let cov_aa = g.cov().view((0, 0), (n_alpha, n_alpha));
    let cov_ab = g.cov().view((0, n_alpha), (n_alpha, nb)).into_owned();
    let cov_bb = g.cov().view((n_alpha, n_alpha), (nb, nb)).into_owned();
    check_nonsingular(&cov_bb, "Sigma_beta_beta")?;
    let chol = cov_bb.cholesky().ok_or(Error::Singular {
        name: "Sigma_beta_beta",
    })?;
    let gain_t = chol.solve(&cov_ab.transpose());
    let mean_a = mu_a + gain_t.transpose() * (beta - mu_b);
    let cov_cond = symmetrize(&(cov_aa - &cov_ab * &gain_t));
    pad(mean_a, beta, cov_cond)
}

/// Conditioning by transforming to the `H = [N S]` frame, applying the axis-aligned
/// form, and transforming back. Mathematically identical to [`LinearManifold::condition`].
pub fn condition_in_axis_frame(g: &Gaussian, manifold: &LinearManifold) -> Result<Gaussian> {
    let frame = manifold.frame_transform()?;
    let z = g.transform(&frame, FrameDirection::ToZ)?;
    let zc = axis_condition(&z, manifold.manifold_dim(), &manifold.axis_frame_offset()?)?;
    zc.transform(&frame, FrameDirection::ToX)
}

/// Marginalization counterpart of [`condition_in_axis_frame`].
pub fn marginalize_in_axis_frame(g: &Gaussian, manifold: &LinearManifold) -> Result<Gaussian> {
    let frame = manifold.frame_transform()?;
    let z = g.transform(&frame, FrameDirection::ToZ)?;
    let zm = axis_marginalize(&z, manifold.manifold_dim(), &manifold.axis_frame_offset()?)?;
    zm.transform(&frame, FrameDirection::ToX)
}
