//! Sparse direction-of-arrival estimation with the complex-valued
//! generalized LASSO and its dual vector.
//!
//! * [`array`]: uniform linear array dictionaries, coherence, snapshot synthesis.
//! * [`lasso`]: the weighted LASSO solver and a slow reference solver.
//! * [`duality`]: dual vector, active sets, KKT certificates, l0 restriction.
//! * [`regpath`]: solution paths, dual peak finding and regularization selection.
//! * [`scenario`]: experiment configurations, built-in scenarios and result records.

pub mod array;
pub mod duality;
mod error;
pub mod lasso;
mod linalg;
pub mod regpath;
pub mod scenario;

pub use error::{Error, Result};
pub use linalg::RANK_TOL;

pub use num_complex::Complex64;

/// Complex column vector used throughout the crate.
pub type CVector = nalgebra::DVector<Complex64>;
