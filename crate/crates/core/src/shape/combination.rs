use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{eval_time_function, slice, time_basis, Prediction};
use crate::constraints::{assemble_block_penalty, PenaltyBlock};
use crate::error::{Error, Result};
use crate::features::DEFAULT_SOBOLEV_ORDER;
use crate::solver::{fit_weakl, predict_stacked, FitDiagnostics, WeaklProblem};
use crate::{CMatrix, CVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinationConfig {
    pub m: usize,
    /// One weight per expert.
    pub lambdas: Vec<f64>,
    #[serde(default = "default_order")]
    pub s: u32,
}

fn default_order() -> u32 {
    DEFAULT_SOBOLEV_ORDER
}

impl CombinationConfig {
    pub fn shared(p: usize, m: usize, lambda: f64) -> Self {
        CombinationConfig {
            m,
            lambdas: vec![lambda; p],
            s: DEFAULT_SOBOLEV_ORDER,
        }
    }
}

/// Forecast `Σ_ℓ (1/p + h_ℓ(t)) Ŷ^ℓ_t` with Fourier-in-time `h_ℓ`.
#[derive(Debug, Clone)]
pub struct CombinationModel {
    pub config: CombinationConfig,
    pub theta: CVector,
    pub diagnostics: FitDiagnostics,
}

fn check(times: &[f64], experts: &DMatrix<f64>, p: usize) -> Result<()> {
    if p == 0 || experts.ncols() == 0 {
        return Err(Error::Config("combination needs at least one expert".into()));
    }
    if experts.ncols() != p {
        return Err(Error::shape(format!("{p} experts"), experts.ncols()));
    }
    if experts.nrows() != times.len() {
        return Err(Error::shape(format!("{} expert rows", times.len()), experts.nrows()));
    }
    if let Some(v) = experts.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("expert forecast {v}")));
    }
    Ok(())
}

fn design(times: &[f64], experts: &DMatrix<f64>, m: usize) -> CMatrix {
    let width = 2 * m + 1;
    let mut out = CMatrix::zeros(times.len(), width * experts.ncols());
    for (i, &t) in times.iter().enumerate() {
        for l in 0..experts.ncols() {
            for (k, b) in time_basis(t, m).enumerate() {
                out[(i, l * width + k)] = b.conj() * experts[(i, l)];
            }
        }
    }
    out
}

fn mean_forecast(experts: &DMatrix<f64>) -> Vec<f64> {
    let p = experts.ncols() as f64;
    (0..experts.nrows()).map(|i| experts.row(i).sum() / p).collect()
}

/// Fits the weight corrections on `W_t = Y_t − p⁻¹ Σ_ℓ Ŷ^ℓ_t`.
pub fn fit_combination(
    times: &[f64],
    experts: &DMatrix<f64>,
    y: &[f64],
    config: &CombinationConfig,
) -> Result<CombinationModel> {
    check(times, experts, config.lambdas.len())?;
    if y.len() != times.len() {
        return Err(Error::shape(format!("{} targets", times.len()), y.len()));
    }
    let mean = mean_forecast(experts);
    let residual: Vec<f64> = y.iter().zip(&mean).map(|(a, b)| a - b).collect();
    let blocks: Vec<PenaltyBlock> = config
        .lambdas
        .iter()
        .enumerate()
        .map(|(l, &lambda)| PenaltyBlock::sobolev(format!("expert{}", l + 1), lambda, config.m, config.s))
        .collect();
    let penalty = assemble_block_penalty(&blocks, blocks.len() * (2 * config.m + 1))?;
    let problem = WeaklProblem::stacked(design(times, experts, config.m), &residual, penalty);
    let solution = fit_weakl(&problem)?;
    Ok(CombinationModel {
        config: config.clone(),
        theta: solution.theta,
        diagnostics: solution.diagnostics,
    })
}

impl CombinationModel {
    pub fn n_experts(&self) -> usize {
        self.config.lambdas.len()
    }

    /// Weight `1/p + Re h_ℓ(t)` of every expert at time `t`.
    pub fn weights(&self, t: f64) -> Vec<f64> {
        let p = self.n_experts();
        let width = 2 * self.config.m + 1;
        (0..p)
            .map(|l| {
                1.0 / p as f64 + eval_time_function(t, self.config.m, &slice(&self.theta, l * width, width)).re
            })
            .collect()
    }

    pub fn predict(&self, times: &[f64], experts: &DMatrix<f64>) -> Result<Prediction> {
        check(times, experts, self.n_experts())?;
        let (corr, max_imag) = predict_stacked(&design(times, experts, self.config.m), &self.theta);
        let values = mean_forecast(experts)
            .into_iter()
            .zip(corr)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Prediction { values, max_imag })
    }
}
