//! Sample-complexity bounds and shattering constructions for one-hidden-layer
//! networks under spectral and Frobenius norm constraints, plus a numerical
//! estimator of the empirical Rademacher complexity of the same classes.

pub mod activations;
pub mod bounds;
pub mod error;
pub mod linalg;
pub mod networks;
pub mod rademacher;
pub mod rng;
pub mod shattering;

pub use activations::Activation;
pub use error::{Error, Result};
pub use linalg::Matrix;
