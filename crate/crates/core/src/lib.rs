pub mod error;
pub mod estimator;
pub mod gaussian;
pub mod linear;
pub mod projnorm;
pub mod pushing;
pub mod smooth;

pub use error::{Error, Result};
pub use gaussian::{FrameDirection, FrameTransform, Gaussian};
pub use linear::LinearManifold;
pub use smooth::{ManifoldModel, TangentGaussian};
