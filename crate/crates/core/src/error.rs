use thiserror::Error;

/// Errors produced by the Gaussian, manifold, and estimation routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("covariance is not positive semidefinite (min eigenvalue {min_eigenvalue:.3e}, max {max_eigenvalue:.3e})")]
    NotPositiveSemidefinite {
        min_eigenvalue: f64,
        max_eigenvalue: f64,
    },
    #[error("covariance is rank deficient (rank {rank} of {dim}); operation needs a full-rank covariance")]
    RankDeficientCovariance { rank: usize, dim: usize },
    #[error("matrix {name} is rank deficient (numerical rank {rank}, need {required})")]
    RankDeficientMatrix {
        name: &'static str,
        rank: usize,
        required: usize,
    },
    #[error(
        "constraint count {constraints} must be positive and below the ambient dimension {dim}"
    )]
    InvalidConstraintCount { constraints: usize, dim: usize },
    #[error("matrix {name} is singular")]
    Singular { name: &'static str },
    #[error("frame transform is not invertible")]
    NonInvertibleTransform,
    #[error("axis split {split} out of range for dimension {dim}")]
    SplitOutOfRange { split: usize, dim: usize },
    #[error("point is off the manifold (|f| = {residual:.3e})")]
    OffManifold { residual: f64 },
    #[error("point lies outside the chart radius ({distance:.3e} > {radius:.3e})")]
    OutsideChart { distance: f64, radius: f64 },
    #[error("projection onto the manifold is undefined at this point")]
    ProjectionUndefined,
    #[error("non-finite value encountered in {context}")]
    NonFinite { context: &'static str },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
