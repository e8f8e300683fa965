//! Exact minimizer of the weighted, penalized empirical risk.
//!
//! For per-step feature matrices `Φ_{t_j}`, targets `Y_{t_j}`, weights `Λ`
//! and penalty `M`, the risk
//!
//! ```text
//! L(θ) = (1/n) Σ_j ‖Λ(Φ_{t_j}θ − Y_{t_j})‖² + ‖Mθ‖²
//! ```
//!
//! is minimized by `θ̂ = G⁻¹ Σ_j Φ_{t_j}*Λ*ΛY_{t_j}` with
//! `G = Σ_j Φ_{t_j}*Λ*ΛΦ_{t_j} + n M*M`. `G` is Hermitian and is factored
//! by Cholesky; the cost is `O(dim(θ)³ + dim(θ)² n)`.

use log::warn;
use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::constraints::PenaltyMatrix;
use crate::error::{Error, Result};
use crate::{c, CMatrix, CVector, C64};

/// Relative eigenvalue floor below which `G` counts as singular.
pub const SINGULAR_TOLERANCE: f64 = 1e-13;
/// Relative size of the diagonal jitter used on a failed factorization.
pub const JITTER: f64 = 1e-10;
/// Largest accepted normwise backward error
/// `‖Gθ̂ − rhs‖ / (‖G‖‖θ̂‖ + ‖rhs‖)`.
pub const RESIDUAL_TOLERANCE: f64 = 1e-8;

/// Feature matrices of a problem.
#[derive(Debug, Clone)]
pub enum Design {
    /// Single output: row j is `φ(X_{t_j})*`.
    Stacked(CMatrix),
    /// One `d_out × dim(θ)` matrix per time step.
    PerStep(Vec<CMatrix>),
}

impl Design {
    pub fn n(&self) -> usize {
        match self {
            Design::Stacked(m) => m.nrows(),
            Design::PerStep(v) => v.len(),
        }
    }

    fn dim(&self) -> Option<usize> {
        match self {
            Design::Stacked(m) => Some(m.ncols()),
            Design::PerStep(v) => v.first().map(|m| m.ncols()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct WeaklProblem {
    pub design: Design,
    /// `n × d_out` real targets.
    pub targets: DMatrix<f64>,
    /// `Λ`, `r × d_out`; `None` is the identity.
    pub weight: Option<CMatrix>,
    pub penalty: PenaltyMatrix,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub n: usize,
    pub dim: usize,
    /// Squared ratio of extreme Cholesky pivots, a cheap lower bound on
    /// the condition number of `G`.
    pub condition_estimate: f64,
    pub jitter_applied: bool,
    /// Normwise backward error of the solve.
    pub relative_residual: f64,
}

#[derive(Debug, Clone)]
pub struct WeaklSolution {
    pub theta: CVector,
    pub diagnostics: FitDiagnostics,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SolveOptions {
    /// Skip the real-arithmetic shortcut even when every input is real.
    pub force_complex: bool,
}

impl WeaklProblem {
    /// Single-output problem with identity weight.
    pub fn stacked(design: CMatrix, targets: &[f64], penalty: PenaltyMatrix) -> Self {
        WeaklProblem {
            targets: DMatrix::from_column_slice(targets.len(), 1, targets),
            design: Design::Stacked(design),
            weight: None,
            penalty,
        }
    }

    pub fn n(&self) -> usize {
        self.design.n()
    }

    pub fn dim(&self) -> usize {
        self.design.dim().unwrap_or_else(|| self.penalty.dim())
    }

    fn validate(&self) -> Result<()> {
        let n = self.n();
        if n == 0 {
            return Err(Error::Data("problem has no observations".into()));
        }
        let dim = self.dim();
        if self.penalty.dim() != dim {
            return Err(Error::shape(format!("penalty with {dim} columns"), self.penalty.dim()));
        }
        if self.targets.nrows() != n {
            return Err(Error::shape(format!("{n} target rows"), self.targets.nrows()));
        }
        let d_out = match &self.design {
            Design::Stacked(_) => 1,
            Design::PerStep(v) => {
                let d = v[0].nrows();
                if let Some(bad) = v.iter().find(|m| m.nrows() != d || m.ncols() != dim) {
                    return Err(Error::shape(format!("{d}×{dim} step matrices"), format!("{}×{}", bad.nrows(), bad.ncols())));
                }
                d
            }
        };
        if self.targets.ncols() != d_out {
            return Err(Error::shape(format!("{d_out} target columns"), self.targets.ncols()));
        }
        if let Some(w) = &self.weight {
            if w.ncols() != d_out {
                return Err(Error::shape(format!("weight with {d_out} columns"), w.ncols()));
            }
            if w.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
                return Err(Error::NonFinite("weight matrix".into()));
            }
        }
        let finite = |m: &CMatrix| m.iter().all(|v| v.re.is_finite() && v.im.is_finite());
        let design_ok = match &self.design {
            Design::Stacked(m) => finite(m),
            Design::PerStep(v) => v.iter().all(finite),
        };
        if !design_ok {
            return Err(Error::NonFinite("feature matrix".into()));
        }
        if self.targets.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("targets".into()));
        }
        if !finite(&self.penalty.matrix) {
            return Err(Error::NonFinite("penalty matrix".into()));
        }
        Ok(())
    }

    /// Weighted stacked system `A = [ΛΦ_{t_1}; …]`, `b = [ΛY_{t_1}; …]`.
    pub fn weighted_system(&self) -> (CMatrix, CVector) {
        match &self.design {
            Design::Stacked(phi) => {
                let y = CVector::from_iterator(self.n(), self.targets.column(0).iter().map(|&v| c(v)));
                match &self.weight {
                    None => (phi.clone(), y),
                    Some(w) => {
                        let scale = (w.adjoint() * w)[(0, 0)].re.max(0.0).sqrt();
                        (phi * c(scale), y * c(scale))
                    }
                }
            }
            Design::PerStep(steps) => {
                let d_out = steps[0].nrows();
                let r = self.weight.as_ref().map_or(d_out, |w| w.nrows());
                let dim = self.dim();
                let mut a = CMatrix::zeros(r * steps.len(), dim);
                let mut b = CVector::zeros(r * steps.len());
                for (j, phi) in steps.iter().enumerate() {
                    let y = CVector::from_iterator(d_out, self.targets.row(j).iter().map(|&v| c(v)));
                    let (wa, wb) = match &self.weight {
                        None => (phi.clone(), y),
                        Some(w) => (w * phi, w * y),
                    };
                    a.rows_mut(j * r, r).copy_from(&wa);
                    b.rows_mut(j * r, r).copy_from(&wb);
                }
                (a, b)
            }
        }
    }

    /// `G` and the right-hand side of the normal equations.
    pub fn normal_equations(&self) -> (CMatrix, CVector) {
        let (a, b) = self.weighted_system();
        let n = self.n() as f64;
        let g = a.adjoint() * &a + self.penalty.gram() * c(n);
        let rhs = a.adjoint() * b;
        (hermitize(g), rhs)
    }
}

fn hermitize(g: CMatrix) -> CMatrix {
    (&g + g.adjoint()) * c(0.5)
}

fn is_real(m: &CMatrix) -> bool {
    m.iter().all(|v| v.im == 0.0)
}

/// Minimizes the empirical risk of `problem` exactly.
pub fn fit_weakl(problem: &WeaklProblem) -> Result<WeaklSolution> {
    fit_weakl_with(problem, SolveOptions::default())
}

pub fn fit_weakl_with(problem: &WeaklProblem, options: SolveOptions) -> Result<WeaklSolution> {
    problem.validate()?;
    let (g, rhs) = problem.normal_equations();
    let (theta, condition_estimate, jitter_applied) =
        if !options.force_complex && is_real(&g) && rhs.iter().all(|v| v.im == 0.0) {
            let gr = g.map(|v| v.re);
            let rr = rhs.map(|v| v.re);
            let (x, cond, jit) = solve_real(&gr, &rr, &problem.penalty)?;
            (x.map(c), cond, jit)
        } else {
            solve_complex(&g, &rhs, &problem.penalty)?
        };
    if theta.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::NonFinite("solution".into()));
    }
    let scale = g.norm() * theta.norm() + rhs.norm();
    let relative_residual = if scale > 0.0 {
        (&g * &theta - &rhs).norm() / scale
    } else {
        0.0
    };
    if relative_residual > RESIDUAL_TOLERANCE {
        return Err(Error::RankDeficient {
            condition: condition_estimate,
        });
    }
    Ok(WeaklSolution {
        theta,
        diagnostics: FitDiagnostics {
            n: problem.n(),
            dim: problem.dim(),
            condition_estimate,
            jitter_applied,
            relative_residual,
        },
    })
}

macro_rules! hermitian_solve {
    ($name:ident, $t:ty, $from:expr) => {
        fn $name(
            g: &DMatrix<$t>,
            rhs: &DVector<$t>,
            penalty: &PenaltyMatrix,
        ) -> Result<(DVector<$t>, f64, bool)> {
            let dim = g.nrows();
            if dim == 0 {
                return Ok((DVector::zeros(0), 1.0, false));
            }
            if let Some(ch) = Cholesky::new(g.clone()) {
                let cond = pivot_condition(ch.l_dirty().diagonal().iter().map(|v| nalgebra::ComplexField::modulus(*v)));
                if cond * SINGULAR_TOLERANCE < 1.0 {
                    return Ok((ch.solve(rhs), cond, false));
                }
            }
            let eig = SymmetricEigen::new(g.clone()).eigenvalues;
            let (min, max) = (eig.min(), eig.max());
            if !(max > 0.0) || min <= SINGULAR_TOLERANCE * max {
                return Err(Error::SingularGram {
                    zero_penalty_blocks: penalty.zero_blocks(),
                });
            }
            let trace: f64 = (0..dim).map(|i| nalgebra::ComplexField::real(g[(i, i)])).sum();
            let eps: $t = $from(JITTER * trace / dim as f64);
            warn!("gram factorization failed, retrying with diagonal jitter {}", JITTER * trace / dim as f64);
            let mut jittered = g.clone();
            for i in 0..dim {
                jittered[(i, i)] += eps;
            }
            let ch = Cholesky::new(jittered).ok_or_else(|| Error::SingularGram {
                zero_penalty_blocks: penalty.zero_blocks(),
            })?;
            let cond = pivot_condition(ch.l_dirty().diagonal().iter().map(|v| nalgebra::ComplexField::modulus(*v)));
            Ok((ch.solve(rhs), cond, true))
        }
    };
}

hermitian_solve!(solve_real, f64, |v: f64| v);
hermitian_solve!(solve_complex, C64, c);

fn pivot_condition(pivots: impl Iterator<Item = f64>) -> f64 {
    let (lo, hi) = pivots.fold((f64::INFINITY, 0.0f64), |(lo, hi), p| (lo.min(p), hi.max(p)));
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        (hi / lo).powi(2)
    }
}

/// `(1/n) Σ_j ‖Λ(Φ_{t_j}θ − Y_{t_j})‖² + ‖Mθ‖²`.
pub fn empirical_risk(theta: &CVector, problem: &WeaklProblem) -> f64 {
    let (a, b) = problem.weighted_system();
    let fit = (a * theta - b).norm_squared() / problem.n() as f64;
    fit + (&problem.penalty.matrix * theta).norm_squared()
}

/// Real parts of `Φθ` for a stacked design, with the largest imaginary
/// magnitude as a diagnostic.
pub fn predict_stacked(design: &CMatrix, theta: &CVector) -> (Vec<f64>, f64) {
    if design.nrows() == 0 {
        return (Vec::new(), 0.0);
    }
    let v = design * theta;
    let imag = v.iter().fold(0.0f64, |m, z| m.max(z.im.abs()));
    (v.iter().map(|z| z.re).collect(), imag)
}

/// Smallest eigenvalue of a Hermitian matrix.
pub fn min_eigenvalue(g: &CMatrix) -> f64 {
    SymmetricEigen::new(g.clone()).eigenvalues.min()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::{assemble_block_penalty, PenaltyBlock};
    use rand::{Rng, SeedableRng};

    fn linear_problem(x: &[f64], y: &[f64], lambda: Option<f64>) -> WeaklProblem {
        let design = CMatrix::from_fn(x.len(), 1, |i, _| c(x[i]));
        let penalty = match lambda {
            None => PenaltyMatrix::zero(1),
            Some(l) => assemble_block_penalty(&[PenaltyBlock::ridge("x", l, 1)], 1).unwrap(),
        };
        WeaklProblem::stacked(design, y, penalty)
    }

    #[test]
    fn noiseless_interpolation() {
        let p = linear_problem(&[1.0, -1.0], &[1.0, -1.0], None);
        let s = fit_weakl(&p).unwrap();
        assert!((s.theta[0] - c(1.0)).norm() < 1e-14);
        assert!(empirical_risk(&s.theta, &p) < 1e-28);
    }

    #[test]
    fn ridge_closed_form() {
        // (Σx²/n + λ)⁻¹ Σxy/n = (1 + 1)⁻¹ · 1
        let p = linear_problem(&[1.0, -1.0], &[1.0, -1.0], Some(1.0));
        let s = fit_weakl(&p).unwrap();
        assert!((s.theta[0] - c(0.5)).norm() < 1e-14);
    }

    #[test]
    fn zero_targets_give_zero() {
        let p = linear_problem(&[1.0, 2.0, 3.0], &[0.0; 3], Some(0.1));
        assert_eq!(fit_weakl(&p).unwrap().theta[0], c(0.0));
    }

    #[test]
    fn risk_at_zero_is_mean_square_target() {
        let p = linear_problem(&[1.0, 2.0], &[3.0, 4.0], None);
        let r = empirical_risk(&CVector::zeros(1), &p);
        assert!((r - 12.5).abs() < 1e-14);
    }

    #[test]
    fn singular_gram_reports_zero_blocks() {
        let design = CMatrix::from_fn(3, 2, |i, _| c(i as f64 + 1.0));
        let penalty = assemble_block_penalty(
            &[PenaltyBlock::ridge("a", 0.0, 1), PenaltyBlock::ridge("b", 0.0, 1)],
            2,
        )
        .unwrap();
        let p = WeaklProblem::stacked(design, &[1.0, 2.0, 3.0], penalty);
        match fit_weakl(&p) {
            Err(Error::SingularGram { zero_penalty_blocks }) => {
                assert_eq!(zero_penalty_blocks, vec!["a".to_string(), "b".to_string()])
            }
            other => panic!("expected singular gram, got {other:?}"),
        }
    }

    #[test]
    fn zero_weight_and_zero_penalty_is_singular() {
        let p = WeaklProblem {
            weight: Some(CMatrix::zeros(1, 1)),
            ..linear_problem(&[1.0, 2.0], &[1.0, 1.0], None)
        };
        assert!(matches!(fit_weakl(&p), Err(Error::SingularGram { .. })));
    }

    #[test]
    fn non_finite_inputs_rejected() {
        let p = linear_problem(&[1.0, f64::NAN], &[1.0, 1.0], Some(1.0));
        assert!(matches!(fit_weakl(&p), Err(Error::NonFinite(_))));
    }

    #[test]
    fn real_fast_path_matches_complex_path() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let design = CMatrix::from_fn(20, 4, |_, _| c(rng.random_range(-1.0..1.0)));
        let y: Vec<f64> = (0..20).map(|_| rng.random()).collect();
        let penalty = assemble_block_penalty(&[PenaltyBlock::ridge("r", 0.3, 4)], 4).unwrap();
        let p = WeaklProblem::stacked(design, &y, penalty);
        let fast = fit_weakl(&p).unwrap().theta;
        let slow = fit_weakl_with(&p, SolveOptions { force_complex: true }).unwrap().theta;
        assert!((fast - slow).norm() < 1e-12);
    }

    #[test]
    fn per_step_and_stacked_agree() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let n = 15;
        let design = CMatrix::from_fn(n, 3, |_, _| C64::new(rng.random(), rng.random()));
        let y: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let penalty = assemble_block_penalty(&[PenaltyBlock::ridge("r", 0.1, 3)], 3).unwrap();
        let stacked = WeaklProblem::stacked(design.clone(), &y, penalty.clone());
        let per = WeaklProblem {
            design: Design::PerStep((0..n).map(|i| design.rows(i, 1).into_owned()).collect()),
            targets: stacked.targets.clone(),
            weight: None,
            penalty,
        };
        let a = fit_weakl(&stacked).unwrap().theta;
        let b = fit_weakl(&per).unwrap().theta;
        assert!((a - b).norm() < 1e-12);
    }

    #[test]
    fn predict_empty_input() {
        let (v, imag) = predict_stacked(&CMatrix::zeros(0, 3), &CVector::zeros(3));
        assert!(v.is_empty());
        assert_eq!(imag, 0.0);
    }

    #[test]
    fn predict_linear() {
        let (v, _) = predict_stacked(&CMatrix::from_element(1, 1, c(2.0)), &CVector::from_element(1, c(1.0)));
        assert_eq!(v, vec![2.0]);
    }
}
