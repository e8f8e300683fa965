//! Closed-form constrained kernel learners for time-series forecasting.
//!
//! Every estimator in this crate minimizes a weighted, penalized empirical
//! risk of the form
//!
//! ```text
//! L(θ) = (1/n) Σ_j ‖Λ(Φ_{t_j} θ − Y_{t_j})‖² + ‖Mθ‖²
//! ```
//!
//! over complex coefficient vectors θ, and does so exactly by solving the
//! Hermitian normal equations. Shape constraints (additive effects, online
//! correction after a break, forecast combination) are expressed through the
//! feature maps; learning constraints (linear subspaces, transfer learning,
//! hierarchies) through the weight matrix Λ and the penalty matrix M.

pub mod constraints;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod hierarchy;
pub mod model;
pub mod rng;
pub mod shape;
pub mod solver;
pub mod tuning;

pub use error::{Error, ErrorCategory, Result};

/// Library version recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

use nalgebra::{DMatrix, DVector};

/// Complex double.
pub type C64 = nalgebra::Complex<f64>;
/// Dense complex matrix.
pub type CMatrix = DMatrix<C64>;
/// Dense complex vector.
pub type CVector = DVector<C64>;

pub(crate) fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// Lifts a real matrix into the complex field.
pub fn complexify(m: &DMatrix<f64>) -> CMatrix {
    m.map(c)
}
