use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::Prediction;
use crate::constraints::{assemble_block_penalty, PenaltyBlock};
use crate::error::{Error, Result};
use crate::features::{eval_map, stack_effects, FeatureMapSpec};
use crate::solver::{fit_weakl, predict_stacked, FitDiagnostics, WeaklProblem};
use crate::CVector;

/// One additive term `g_ℓ(x) = ⟨φ_ℓ(x), θ_ℓ⟩` with its penalty weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Effect {
    pub name: String,
    pub map: FeatureMapSpec,
    pub lambda: f64,
}

impl Effect {
    pub fn new(name: impl Into<String>, map: FeatureMapSpec, lambda: f64) -> Self {
        Effect {
            name: name.into(),
            map,
            lambda,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdditiveModel {
    pub effects: Vec<Effect>,
    /// Start of each effect's coefficient block in `theta`.
    pub offsets: Vec<usize>,
    pub theta: CVector,
    pub diagnostics: FitDiagnostics,
}

pub(crate) fn additive_problem(
    features: &DMatrix<f64>,
    y: &[f64],
    effects: &[Effect],
) -> Result<WeaklProblem> {
    if effects.is_empty() {
        return Err(Error::Config("additive model needs at least one effect".into()));
    }
    if features.nrows() != y.len() {
        return Err(Error::shape(format!("{} targets", features.nrows()), y.len()));
    }
    for e in effects {
        e.map.validate()?;
        if e.map.inputs().iter().any(|&i| i >= features.ncols()) {
            return Err(Error::Config(format!(
                "effect {:?} reads a column outside the {} features",
                e.name,
                features.ncols()
            )));
        }
    }
    let maps: Vec<FeatureMapSpec> = effects.iter().map(|e| e.map.clone()).collect();
    let blocks: Vec<PenaltyBlock> = effects
        .iter()
        .map(|e| PenaltyBlock::for_map(e.name.clone(), e.lambda, &e.map))
        .collect();
    let dim = maps.iter().map(FeatureMapSpec::dim).sum();
    let penalty = assemble_block_penalty(&blocks, dim)?;
    let design = stack_effects(&maps, features)?;
    Ok(WeaklProblem::stacked(design, y, penalty))
}

/// Fits `y ≈ Σ_ℓ g_ℓ(x_ℓ)` on rescaled features with a block-diagonal
/// penalty `diag(√λ_ℓ M_ℓ)`.
pub fn fit_additive(features: &DMatrix<f64>, y: &[f64], effects: &[Effect]) -> Result<AdditiveModel> {
    let problem = additive_problem(features, y, effects)?;
    let solution = fit_weakl(&problem)?;
    let mut offsets = Vec::with_capacity(effects.len());
    let mut off = 0;
    for e in effects {
        offsets.push(off);
        off += e.map.dim();
    }
    Ok(AdditiveModel {
        effects: effects.to_vec(),
        offsets,
        theta: solution.theta,
        diagnostics: solution.diagnostics,
    })
}

impl AdditiveModel {
    pub fn from_parts(effects: Vec<Effect>, theta: CVector) -> Result<Self> {
        let dim: usize = effects.iter().map(|e| e.map.dim()).sum();
        if dim != theta.len() {
            return Err(Error::shape(format!("{dim} coefficients"), theta.len()));
        }
        let mut offsets = Vec::new();
        let mut off = 0;
        for e in &effects {
            offsets.push(off);
            off += e.map.dim();
        }
        Ok(AdditiveModel {
            effects,
            offsets,
            theta,
            diagnostics: FitDiagnostics::default(),
        })
    }

    pub fn n_effects(&self) -> usize {
        self.effects.len()
    }

    fn maps(&self) -> Vec<FeatureMapSpec> {
        self.effects.iter().map(|e| e.map.clone()).collect()
    }

    pub fn predict(&self, features: &DMatrix<f64>) -> Result<Prediction> {
        let design = stack_effects(&self.maps(), features)?;
        let (values, max_imag) = predict_stacked(&design, &self.theta);
        Ok(Prediction { values, max_imag })
    }

    fn effect_on_row(&self, effect: usize, row: &[f64]) -> Result<nalgebra::Complex<f64>> {
        let e = &self.effects[effect];
        let phi = eval_map(&e.map, row)?;
        let off = self.offsets[effect];
        Ok(phi
            .iter()
            .enumerate()
            .map(|(j, p)| p.conj() * self.theta[off + j])
            .sum())
    }

    /// `ĝ_ℓ` evaluated on every row of a feature matrix.
    pub fn effect_on_rows(&self, effect: usize, features: &DMatrix<f64>) -> Result<Prediction> {
        self.check_effect(effect)?;
        let mut values = Vec::with_capacity(features.nrows());
        let mut max_imag = 0.0f64;
        for i in 0..features.nrows() {
            let row: Vec<f64> = features.row(i).iter().copied().collect();
            let v = self.effect_on_row(effect, &row)?;
            max_imag = max_imag.max(v.im.abs());
            values.push(v.re);
        }
        Ok(Prediction { values, max_imag })
    }

    /// `n × p` matrix of every effect on every row, the base input of an
    /// online model.
    pub fn effect_matrix(&self, features: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(features.nrows(), self.n_effects());
        for l in 0..self.n_effects() {
            let p = self.effect_on_rows(l, features)?;
            for (i, v) in p.values.into_iter().enumerate() {
                out[(i, l)] = v;
            }
        }
        Ok(out)
    }

    /// `ĝ_ℓ` of a single-input effect on a grid of rescaled values.
    pub fn effect_curve(&self, effect: usize, grid: &[f64]) -> Result<Prediction> {
        self.check_effect(effect)?;
        let inputs = self.effects[effect].map.inputs();
        if inputs.len() != 1 {
            return Err(Error::Config(format!(
                "effect {:?} has {} inputs; curves need exactly one",
                self.effects[effect].name,
                inputs.len()
            )));
        }
        let width = inputs[0] + 1;
        let mut values = Vec::with_capacity(grid.len());
        let mut max_imag = 0.0f64;
        let mut row = vec![0.0; width];
        for &x in grid {
            row[inputs[0]] = x;
            let v = self.effect_on_row(effect, &row)?;
            max_imag = max_imag.max(v.im.abs());
            values.push(v.re);
        }
        Ok(Prediction { values, max_imag })
    }

    fn check_effect(&self, effect: usize) -> Result<()> {
        if effect >= self.effects.len() {
            return Err(Error::Config(format!(
                "effect index {effect} out of range ({} effects)",
                self.effects.len()
            )));
        }
        Ok(())
    }
}
