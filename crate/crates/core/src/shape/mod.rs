//! Shape-constrained models: additive effects, online correction of a
//! frozen additive model, and time-varying forecast combination.
//!
//! All three lower to a single-output stacked problem for the solver.

mod additive;
mod combination;
mod online;

pub use additive::{fit_additive, AdditiveModel, Effect};
pub use combination::{fit_combination, CombinationConfig, CombinationModel};
pub use online::{
    fit_online, rolling_refit, CorrectionSpec, Forecast, OnlineConfig, OnlineModel, RollingPolicy,
};

use crate::features::fourier_frequencies;
use crate::{CVector, C64};

/// Prediction values with the largest discarded imaginary part.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub values: Vec<f64>,
    pub max_imag: f64,
}

/// `(e^{ikt/2})_{-m ≤ k ≤ m}`.
pub(crate) fn time_basis(t: f64, m: usize) -> impl Iterator<Item = C64> {
    fourier_frequencies(m, 1)
        .into_iter()
        .map(move |k| C64::from_polar(1.0, k[0] as f64 * t / 2.0))
}

/// Evaluates `h(t) = ⟨φ(t), θ⟩` for a Fourier-in-time coefficient block.
pub(crate) fn eval_time_function(t: f64, m: usize, theta: &[C64]) -> C64 {
    time_basis(t, m).zip(theta).map(|(p, th)| p.conj() * th).sum()
}

pub(crate) fn slice(theta: &CVector, offset: usize, len: usize) -> Vec<C64> {
    theta.rows(offset, len).iter().copied().collect()
}
