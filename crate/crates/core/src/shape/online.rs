use std::ops::Range;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{eval_time_function, slice, time_basis, Prediction};
use crate::constraints::{assemble_block_penalty, PenaltyBlock};
use crate::error::{Error, Result};
use crate::features::DEFAULT_SOBOLEV_ORDER;
use crate::solver::{fit_weakl, predict_stacked, FitDiagnostics, WeaklProblem};
use crate::{c, CMatrix, CVector, C64};

/// Frequency cutoff and penalty weight of one correction `h_j(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrectionSpec {
    pub m: usize,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineConfig {
    /// Additive drift `h_0(t)`; omit when time already enters the base.
    pub intercept: Option<CorrectionSpec>,
    /// Multiplicative corrections, one per base effect.
    pub effects: Vec<CorrectionSpec>,
    #[serde(default = "default_order")]
    pub s: u32,
}

fn default_order() -> u32 {
    DEFAULT_SOBOLEV_ORDER
}

impl OnlineConfig {
    /// Same `m` and `λ` for every correction.
    pub fn shared(n_effects: usize, m: usize, lambda: f64, intercept: bool) -> Self {
        let spec = CorrectionSpec { m, lambda };
        OnlineConfig {
            intercept: intercept.then_some(spec),
            effects: vec![spec; n_effects],
            s: DEFAULT_SOBOLEV_ORDER,
        }
    }

    fn corrections(&self) -> impl Iterator<Item = &CorrectionSpec> {
        self.intercept.iter().chain(self.effects.iter())
    }

    pub fn dim(&self) -> usize {
        self.corrections().map(|c| 2 * c.m + 1).sum()
    }

    fn validate(&self) -> Result<()> {
        for c in self.corrections() {
            if !(c.lambda > 0.0) || !c.lambda.is_finite() {
                return Err(Error::Config(format!(
                    "online correction weights must be positive, got {}",
                    c.lambda
                )));
            }
        }
        if self.s < 1 {
            return Err(Error::Config("sobolev order must be at least 1".into()));
        }
        Ok(())
    }
}

/// Frozen base effects plus fitted Fourier-in-time corrections.
#[derive(Debug, Clone)]
pub struct OnlineModel {
    pub config: OnlineConfig,
    pub theta: CVector,
    pub diagnostics: FitDiagnostics,
}

fn check_inputs(times: &[f64], base: &DMatrix<f64>, config: &OnlineConfig) -> Result<()> {
    if base.nrows() != times.len() {
        return Err(Error::shape(format!("{} base rows", times.len()), base.nrows()));
    }
    if base.ncols() != config.effects.len() {
        return Err(Error::shape(
            format!("{} base effects", config.effects.len()),
            base.ncols(),
        ));
    }
    if let Some(v) = base.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("base effect value {v}")));
    }
    if times.iter().any(|t| !t.is_finite()) {
        return Err(Error::NonFinite("time stamp".into()));
    }
    Ok(())
}

/// Rows `conj(((e^{ikt/2})_k, (ĝ_ℓ e^{ikt/2})_k, …))`.
fn online_design(times: &[f64], base: &DMatrix<f64>, config: &OnlineConfig) -> CMatrix {
    let dim = config.dim();
    let mut design = CMatrix::zeros(times.len(), dim);
    for (i, &t) in times.iter().enumerate() {
        let mut col = 0;
        if let Some(h0) = &config.intercept {
            for p in time_basis(t, h0.m) {
                design[(i, col)] = p.conj();
                col += 1;
            }
        }
        for (l, spec) in config.effects.iter().enumerate() {
            let g = base[(i, l)];
            for p in time_basis(t, spec.m) {
                design[(i, col)] = p.conj() * g;
                col += 1;
            }
        }
    }
    design
}

fn online_penalty(config: &OnlineConfig) -> Result<crate::constraints::PenaltyMatrix> {
    let mut blocks = Vec::new();
    if let Some(h0) = &config.intercept {
        blocks.push(PenaltyBlock::sobolev("h0", h0.lambda, h0.m, config.s));
    }
    for (l, spec) in config.effects.iter().enumerate() {
        blocks.push(PenaltyBlock::sobolev(format!("h{}", l + 1), spec.lambda, spec.m, config.s));
    }
    assemble_block_penalty(&blocks, config.dim())
}

/// The stacked system an online fit solves, exposed for oracle checks.
pub(crate) fn online_problem(
    times: &[f64],
    base: &DMatrix<f64>,
    y: &[f64],
    config: &OnlineConfig,
) -> Result<WeaklProblem> {
    config.validate()?;
    check_inputs(times, base, config)?;
    if y.len() != times.len() {
        return Err(Error::shape(format!("{} targets", times.len()), y.len()));
    }
    let residual: Vec<f64> = y
        .iter()
        .enumerate()
        .map(|(i, v)| v - base.row(i).sum())
        .collect();
    let design = online_design(times, base, config);
    Ok(WeaklProblem::stacked(design, &residual, online_penalty(config)?))
}

/// Fits corrections to the residual `W_t = Y_t − Σ_ℓ ĝ_ℓ(X_{ℓ,t})`.
///
/// `base` holds `ĝ_ℓ(X_{ℓ,t})` with one column per effect, typically from
/// [`AdditiveModel::effect_matrix`](super::AdditiveModel::effect_matrix).
pub fn fit_online(
    times: &[f64],
    base: &DMatrix<f64>,
    y: &[f64],
    config: &OnlineConfig,
) -> Result<OnlineModel> {
    let problem = online_problem(times, base, y, config)?;
    let solution = fit_weakl(&problem)?;
    Ok(OnlineModel {
        config: config.clone(),
        theta: solution.theta,
        diagnostics: solution.diagnostics,
    })
}

impl OnlineModel {
    /// A model whose corrections are all zero.
    pub fn zero(config: OnlineConfig) -> Self {
        let dim = config.dim();
        OnlineModel {
            config,
            theta: CVector::zeros(dim),
            diagnostics: FitDiagnostics::default(),
        }
    }

    fn blocks(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut off = 0;
        for c in self.config.corrections() {
            out.push((off, c.m));
            off += 2 * c.m + 1;
        }
        out
    }

    /// `h_0(t)`, or zero when the model has no intercept correction.
    pub fn intercept_at(&self, t: f64) -> C64 {
        match self.config.intercept {
            Some(_) => {
                let (off, m) = self.blocks()[0];
                eval_time_function(t, m, &slice(&self.theta, off, 2 * m + 1))
            }
            None => c(0.0),
        }
    }

    /// `h_ℓ(t)` for base effect `ℓ` (zero-based).
    pub fn correction_at(&self, effect: usize, t: f64) -> C64 {
        let skip = usize::from(self.config.intercept.is_some());
        let (off, m) = self.blocks()[skip + effect];
        eval_time_function(t, m, &slice(&self.theta, off, 2 * m + 1))
    }

    /// `h_0(t) + Σ_ℓ (1 + h_ℓ(t)) ĝ_ℓ`.
    pub fn predict(&self, times: &[f64], base: &DMatrix<f64>) -> Result<Prediction> {
        check_inputs(times, base, &self.config)?;
        let design = online_design(times, base, &self.config);
        let (corr, imag) = predict_stacked(&design, &self.theta);
        let values = corr
            .iter()
            .enumerate()
            .map(|(i, v)| v + base.row(i).sum())
            .collect();
        Ok(Prediction {
            values,
            max_imag: imag,
        })
    }
}

/// How the training window trails each refit point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RollingPolicy {
    /// Trailing rows per fit; `None` uses everything since `start`.
    pub window: Option<usize>,
    /// Rows predicted between refits.
    pub stride: usize,
    /// First row any window may use.
    pub start: usize,
}

impl Default for RollingPolicy {
    fn default() -> Self {
        RollingPolicy {
            window: None,
            stride: 1,
            start: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Forecast {
    pub index: usize,
    pub value: f64,
}

/// Refits on a trailing window before every `stride` block of `test` and
/// emits the predictions for that block, ordered by row index.
///
/// `fit_predict(train, target)` must return one value per row of `target`.
/// Refits are independent and run in parallel.
pub fn rolling_refit<F>(test: Range<usize>, policy: RollingPolicy, fit_predict: F) -> Result<Vec<Forecast>>
where
    F: Fn(Range<usize>, Range<usize>) -> Result<Vec<f64>> + Sync,
{
    if policy.stride == 0 {
        return Err(Error::Config("rolling stride must be positive".into()));
    }
    if test.is_empty() {
        return Ok(Vec::new());
    }
    if test.start <= policy.start {
        return Err(Error::Split(format!(
            "first test row {} leaves no history after row {}",
            test.start, policy.start
        )));
    }
    let points: Vec<usize> = test.clone().step_by(policy.stride).collect();
    let windows = points
        .iter()
        .map(|&t| {
            let history = t - policy.start;
            let len = match policy.window {
                Some(w) if w > history => {
                    return Err(Error::Split(format!(
                        "window of {w} rows exceeds the {history} rows available before row {t}"
                    )))
                }
                Some(0) => return Err(Error::Config("rolling window must be positive".into())),
                Some(w) => w,
                None => history,
            };
            Ok((t - len..t, t..(t + policy.stride).min(test.end)))
        })
        .collect::<Result<Vec<_>>>()?;
    let chunks = windows
        .into_par_iter()
        .map(|(train, target)| {
            let values = fit_predict(train, target.clone())?;
            if values.len() != target.len() {
                return Err(Error::shape(format!("{} predictions", target.len()), values.len()));
            }
            Ok(target
                .zip(values)
                .map(|(index, value)| Forecast { index, value })
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::empirical_risk;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn sample(n: usize, p: usize, seed: u64) -> (Vec<f64>, DMatrix<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let times = (0..n).map(|i| -PI + 2.0 * PI * i as f64 / n as f64).collect();
        let base = DMatrix::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0));
        (times, base)
    }

    #[test]
    fn zero_residual_gives_zero_corrections() {
        let (t, base) = sample(30, 2, 1);
        let y: Vec<f64> = (0..30).map(|i| base.row(i).sum()).collect();
        let cfg = OnlineConfig::shared(2, 2, 1.0, true);
        let m = fit_online(&t, &base, &y, &cfg).unwrap();
        assert!(m.theta.iter().all(|v| v.norm() == 0.0));
        let p = m.predict(&t, &base).unwrap();
        assert_eq!(p.values, y);
    }

    #[test]
    fn zero_model_reproduces_base() {
        let (t, base) = sample(10, 3, 2);
        let m = OnlineModel::zero(OnlineConfig::shared(3, 1, 1.0, true));
        let p = m.predict(&t, &base).unwrap();
        for i in 0..10 {
            assert_eq!(p.values[i], base.row(i).sum());
        }
    }

    #[test]
    fn constant_correction_recovers_scale() {
        let (t, base) = sample(200, 1, 3);
        let scale = 0.4;
        let y: Vec<f64> = (0..200).map(|i| (1.0 + scale) * base[(i, 0)]).collect();
        let cfg = OnlineConfig::shared(1, 0, 1e-10, false);
        let m = fit_online(&t, &base, &y, &cfg).unwrap();
        assert!((m.correction_at(0, 0.3).re - scale).abs() < 1e-6);
    }

    #[test]
    fn matches_dense_least_squares_oracle() {
        // dim(θ) = 3 + 3 = 6; minimize the stacked real least-squares over
        // (Re θ, Im θ) directly via SVD.
        let (t, base) = sample(25, 1, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let y: Vec<f64> = (0..25).map(|_| rng.random_range(-2.0..2.0)).collect();
        let cfg = OnlineConfig::shared(1, 1, 0.3, true);
        let problem = online_problem(&t, &base, &y, &cfg).unwrap();
        let model = fit_online(&t, &base, &y, &cfg).unwrap();

        let (a, b) = problem.weighted_system();
        let pen = &problem.penalty.matrix;
        let n = problem.n() as f64;
        let d = a.ncols();
        let rows = a.nrows() + pen.nrows();
        // complex rows → real rows on [Re θ; Im θ]
        let mut big = DMatrix::zeros(2 * rows, 2 * d);
        let mut rhs = nalgebra::DVector::zeros(2 * rows);
        let put = |big: &mut DMatrix<f64>, r: usize, j: usize, z: C64| {
            big[(2 * r, j)] = z.re;
            big[(2 * r, d + j)] = -z.im;
            big[(2 * r + 1, j)] = z.im;
            big[(2 * r + 1, d + j)] = z.re;
        };
        for i in 0..a.nrows() {
            for j in 0..d {
                put(&mut big, i, j, a[(i, j)] / n.sqrt());
            }
            rhs[2 * i] = b[i].re / n.sqrt();
            rhs[2 * i + 1] = b[i].im / n.sqrt();
        }
        for i in 0..pen.nrows() {
            for j in 0..d {
                put(&mut big, a.nrows() + i, j, pen[(i, j)]);
            }
        }
        let sol = big.svd(true, true).solve(&rhs, 1e-14).unwrap();
        for j in 0..d {
            assert!((model.theta[j] - C64::new(sol[j], sol[d + j])).norm() < 1e-8);
        }
        let oracle = CVector::from_fn(d, |j, _| C64::new(sol[j], sol[d + j]));
        assert!(empirical_risk(&model.theta, &problem) <= empirical_risk(&oracle, &problem) + 1e-10);
    }

    #[test]
    fn rejects_non_finite_base() {
        let (t, mut base) = sample(5, 1, 5);
        base[(2, 0)] = f64::NAN;
        let err = fit_online(&t, &base, &[0.0; 5], &OnlineConfig::shared(1, 0, 1.0, false));
        assert!(matches!(err, Err(Error::NonFinite(_))));
    }

    #[test]
    fn rolling_examples() {
        let f = |train: Range<usize>, target: Range<usize>| Ok(vec![train.len() as f64; target.len()]);
        assert!(rolling_refit(10..10, RollingPolicy::default(), f).unwrap().is_empty());

        let out = rolling_refit(5..9, RollingPolicy { stride: 3, ..Default::default() }, f).unwrap();
        let idx: Vec<usize> = out.iter().map(|f| f.index).collect();
        assert_eq!(idx, vec![5, 6, 7, 8]);
        assert_eq!(out[0].value, 5.0);
        assert_eq!(out[3].value, 8.0);

        let too_long = RollingPolicy {
            window: Some(6),
            ..Default::default()
        };
        assert!(matches!(rolling_refit(5..9, too_long, f), Err(Error::Split(_))));

        let trailing = RollingPolicy {
            window: Some(3),
            ..Default::default()
        };
        let out = rolling_refit(5..7, trailing, |train: Range<usize>, _| Ok(vec![train.start as f64])).unwrap();
        assert_eq!(out.iter().map(|f| f.value).collect::<Vec<_>>(), vec![2.0, 3.0]);
    }
}
