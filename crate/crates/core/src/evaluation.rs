//! Error metrics, block and stationary bootstrap, and the MAE skill test.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Geometric};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::rng::stream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rmse: f64,
    pub mae: f64,
    pub mse: f64,
    /// Absent when some target is zero.
    pub mape: Option<f64>,
}

fn check_pair(y: &[f64], yhat: &[f64]) -> Result<()> {
    if y.len() != yhat.len() {
        return Err(Error::shape(format!("{} forecasts", y.len()), yhat.len()));
    }
    if y.is_empty() {
        return Err(Error::Data("no observations to score".into()));
    }
    Ok(())
}

pub fn metrics(y: &[f64], yhat: &[f64]) -> Result<Metrics> {
    check_pair(y, yhat)?;
    let n = y.len() as f64;
    let mse = y.iter().zip(yhat).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n;
    let mae = y.iter().zip(yhat).map(|(a, b)| (a - b).abs()).sum::<f64>() / n;
    Ok(Metrics {
        rmse: mse.sqrt(),
        mae,
        mse,
        mape: mape(y, yhat).ok(),
    })
}

/// Mean of `|ŷ − y| / |y|` as a fraction.
pub fn mape(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_pair(y, yhat)?;
    if y.contains(&0.0) {
        return Err(Error::Data("percentage error is undefined for a zero target".into()));
    }
    Ok(y.iter().zip(yhat).map(|(a, b)| (a - b).abs() / a.abs()).sum::<f64>() / y.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BootstrapMode {
    /// Non-circular blocks of a fixed length.
    Fixed,
    /// Circular blocks with geometric lengths.
    Stationary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    /// Block length; `⌊n^{1/4}⌋` when absent. In stationary mode this is
    /// the mean block length.
    #[serde(default)]
    pub block_length: Option<f64>,
    #[serde(default = "default_resamples")]
    pub resamples: usize,
    #[serde(default = "default_mode")]
    pub mode: BootstrapMode,
    #[serde(default)]
    pub seed: u64,
    /// Two-sided level of the reported intervals.
    #[serde(default = "default_confidence")]
    pub confidence: f64,
}

fn default_resamples() -> usize {
    1000
}
fn default_mode() -> BootstrapMode {
    BootstrapMode::Fixed
}
fn default_confidence() -> f64 {
    0.9
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            block_length: None,
            resamples: default_resamples(),
            mode: default_mode(),
            seed: 0,
            confidence: default_confidence(),
        }
    }
}

/// `⌊n^{1/4}⌋`, at least one.
pub fn default_block_length(n: usize) -> usize {
    ((n as f64).powf(0.25).floor() as usize).max(1)
}

impl BootstrapConfig {
    fn resolved_length(&self, n: usize) -> Result<f64> {
        let l = self.block_length.unwrap_or(default_block_length(n) as f64);
        if !(l >= 1.0) || !l.is_finite() {
            return Err(Error::Config(format!("block length {l} must be at least 1")));
        }
        if self.mode == BootstrapMode::Fixed {
            if l.fract() != 0.0 {
                return Err(Error::Config(format!("fixed block length {l} must be an integer")));
            }
            if l as usize > n {
                return Err(Error::Config(format!("block length {l} exceeds the {n} observations")));
            }
        }
        if self.resamples == 0 {
            return Err(Error::Config("bootstrap needs at least one resample".into()));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::Config(format!("confidence {} outside (0, 1)", self.confidence)));
        }
        Ok(l)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    /// `g` of the full-sample column means.
    pub estimate: f64,
    /// `g` of every resample's column means, in resample order.
    pub statistics: Vec<f64>,
    pub std_dev: f64,
    pub quantile_ci: (f64, f64),
    /// `estimate ± z·std_dev`.
    pub normal_ci: (f64, f64),
    pub block_length: f64,
}

/// Row indices of one fixed-block resample: `⌊n/ℓ⌋ + 1` blocks starting
/// uniformly in `0..=n−ℓ`, concatenated and cut to `n`.
pub fn fixed_block_indices(n: usize, l: usize, rng: &mut impl Rng) -> Vec<usize> {
    let blocks = n / l + 1;
    let mut out = Vec::with_capacity(blocks * l);
    for _ in 0..blocks {
        let start = rng.random_range(0..=n - l);
        out.extend(start..start + l);
    }
    out.truncate(n);
    out
}

/// Row indices of one stationary resample: circular blocks whose lengths
/// are geometric with mean `mean`.
pub fn stationary_indices(n: usize, mean: f64, rng: &mut impl Rng) -> Vec<usize> {
    let geometric = Geometric::new(1.0 / mean).expect("mean ≥ 1");
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let start = rng.random_range(0..n);
        let len = 1 + geometric.sample(rng) as usize;
        out.extend((0..len).map(|k| (start + k) % n));
    }
    out.truncate(n);
    out
}

fn column_means(z: &DMatrix<f64>, rows: impl Iterator<Item = usize>) -> Vec<f64> {
    let mut sums = vec![0.0; z.ncols()];
    let mut count = 0usize;
    for i in rows {
        for (j, s) in sums.iter_mut().enumerate() {
            *s += z[(i, j)];
        }
        count += 1;
    }
    sums.iter().map(|s| s / count as f64).collect()
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Bootstraps `g(Z̄)` for an `n × k` series `z`, in the mode set by
/// `config`. Resample `b` draws from stream `(seed, b)`.
pub fn bootstrap<G>(z: &DMatrix<f64>, g: G, config: &BootstrapConfig) -> Result<BootstrapSummary>
where
    G: Fn(&[f64]) -> f64 + Sync,
{
    let n = z.nrows();
    if n == 0 || z.ncols() == 0 {
        return Err(Error::Data("bootstrap needs a non-empty series".into()));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("bootstrap series".into()));
    }
    let l = config.resolved_length(n)?;
    let estimate = g(&column_means(z, 0..n));
    let statistics: Vec<f64> = (0..config.resamples)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream(config.seed, b as u64);
            let idx = match config.mode {
                BootstrapMode::Fixed => fixed_block_indices(n, l as usize, &mut rng),
                BootstrapMode::Stationary => stationary_indices(n, l, &mut rng),
            };
            g(&column_means(z, idx.into_iter()))
        })
        .collect();
    let b = statistics.len() as f64;
    let mean = statistics.iter().sum::<f64>() / b;
    let std_dev = if statistics.len() > 1 {
        (statistics.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (b - 1.0)).sqrt()
    } else {
        0.0
    };
    let mut sorted = statistics.clone();
    sorted.sort_by(f64::total_cmp);
    let tail = (1.0 - config.confidence) / 2.0;
    let z_crit = z_alpha(tail)?;
    Ok(BootstrapSummary {
        estimate,
        quantile_ci: (quantile(&sorted, tail), quantile(&sorted, 1.0 - tail)),
        normal_ci: (estimate - z_crit * std_dev, estimate + z_crit * std_dev),
        statistics,
        std_dev,
        block_length: l,
    })
}

/// [`bootstrap`] with non-circular fixed-length blocks.
pub fn block_bootstrap<G>(z: &DMatrix<f64>, g: G, config: &BootstrapConfig) -> Result<BootstrapSummary>
where
    G: Fn(&[f64]) -> f64 + Sync,
{
    bootstrap(z, g, &BootstrapConfig { mode: BootstrapMode::Fixed, ..*config })
}

/// [`bootstrap`] with circular geometric-length blocks.
pub fn stationary_bootstrap<G>(z: &DMatrix<f64>, g: G, config: &BootstrapConfig) -> Result<BootstrapSummary>
where
    G: Fn(&[f64]) -> f64 + Sync,
{
    bootstrap(z, g, &BootstrapConfig { mode: BootstrapMode::Stationary, ..*config })
}

/// One-sided standard normal quantile `z` with `P(N > z) = α`; the usual
/// rounded values for 0.1, 0.05 and 0.01.
pub fn z_alpha(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("level {alpha} outside (0, 1)")));
    }
    Ok(match alpha {
        a if a == 0.1 => 1.28,
        a if a == 0.05 => 1.64,
        a if a == 0.01 => 2.33,
        a => Normal::standard().inverse_cdf(1.0 - a),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillResult {
    pub skill: f64,
    pub std_dev: f64,
    /// Lower end of the one-sided interval `[skill − z·σ, +∞)`.
    pub ci_lower: f64,
    pub significant: bool,
    pub mae1: f64,
    pub mae2: f64,
}

/// MAE skill `1 − MAE₁/MAE₂` of forecast 1 over forecast 2, with a
/// bootstrap standard deviation and one-sided interval at level `alpha`.
pub fn skill_test(err1: &[f64], err2: &[f64], config: &BootstrapConfig, alpha: f64) -> Result<SkillResult> {
    check_pair(err1, err2)?;
    let n = err1.len();
    let z = DMatrix::from_fn(n, 2, |i, j| if j == 0 { err1[i].abs() } else { err2[i].abs() });
    let mae1 = z.column(0).mean();
    let mae2 = z.column(1).mean();
    if mae2 == 0.0 {
        return Err(Error::Data("reference forecast has zero absolute error".into()));
    }
    let z_crit = z_alpha(alpha)?;
    let summary = bootstrap(&z, |m| 1.0 - m[0] / m[1], config)?;
    let skill = 1.0 - mae1 / mae2;
    let ci_lower = skill - z_crit * summary.std_dev;
    Ok(SkillResult {
        skill,
        std_dev: summary.std_dev,
        ci_lower,
        significant: ci_lower > 0.0,
        mae1,
        mae2,
    })
}

/// One model's scores with bootstrap standard deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub rmse: f64,
    pub rmse_sd: f64,
    pub mae: f64,
    pub mae_sd: f64,
    /// Percent; absent when some target is zero.
    pub mape: Option<f64>,
    pub mape_sd: Option<f64>,
}

/// Scores every forecast against `y`; all rows share the resample
/// streams of `config`.
pub fn metric_report(y: &[f64], forecasts: &[(String, Vec<f64>)], config: &BootstrapConfig) -> Result<Vec<ReportRow>> {
    forecasts
        .iter()
        .map(|(name, yhat)| {
            let m = metrics(y, yhat)?;
            let n = y.len();
            let has_pct = m.mape.is_some();
            let z = DMatrix::from_fn(n, 3, |i, j| {
                let e = yhat[i] - y[i];
                match j {
                    0 => e * e,
                    1 => e.abs(),
                    _ if has_pct => e.abs() / y[i].abs(),
                    _ => 0.0,
                }
            });
            let rmse = bootstrap(&z, |m| m[0].sqrt(), config)?;
            let mae = bootstrap(&z, |m| m[1], config)?;
            let pct = if has_pct {
                Some(bootstrap(&z, |m| 100.0 * m[2], config)?)
            } else {
                None
            };
            Ok(ReportRow {
                model: name.clone(),
                rmse: m.rmse,
                rmse_sd: rmse.std_dev,
                mae: m.mae,
                mae_sd: mae.std_dev,
                mape: m.mape.map(|v| 100.0 * v),
                mape_sd: pct.map(|s| s.std_dev),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn series(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(v.len(), 1, v)
    }

    #[test]
    fn metric_examples() {
        let y = [1.0, 2.0, 3.0];
        let m = metrics(&y, &y).unwrap();
        assert_eq!((m.rmse, m.mae, m.mse, m.mape), (0.0, 0.0, 0.0, Some(0.0)));
        let shifted: Vec<f64> = y.iter().map(|v| v - 0.7).collect();
        let m = metrics(&y, &shifted).unwrap();
        assert!((m.rmse - 0.7).abs() < 1e-12 && (m.mae - 0.7).abs() < 1e-12);
        assert_eq!(mape(&[1.0, 2.0], &[2.0, 2.0]).unwrap(), 0.5);
        assert!(mape(&[0.0, 2.0], &[1.0, 2.0]).is_err());
        assert_eq!(metrics(&[0.0], &[1.0]).unwrap().mape, None);
        assert!(metrics(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn full_length_block_has_one_position() {
        let z = series(&[1.0, 5.0, 2.0, 8.0]);
        let cfg = BootstrapConfig { block_length: Some(4.0), resamples: 50, ..Default::default() };
        let s = block_bootstrap(&z, |m| m[0], &cfg).unwrap();
        assert!(s.statistics.iter().all(|v| *v == 4.0));
        assert_eq!(s.std_dev, 0.0);
        let too_long = BootstrapConfig { block_length: Some(5.0), ..cfg };
        assert!(matches!(block_bootstrap(&z, |m| m[0], &too_long), Err(Error::Config(_))));
    }

    #[test]
    fn resample_lengths() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for (n, l) in [(10, 3), (9, 3), (7, 1), (5, 5)] {
            let blocks = n / l + 1;
            assert!(blocks * l >= n);
            let idx = fixed_block_indices(n, l, &mut rng);
            assert_eq!(idx.len(), n);
            assert!(idx.iter().all(|&i| i < n));
        }
        let idx = stationary_indices(12, 3.0, &mut rng);
        assert_eq!(idx.len(), 12);
    }

    #[test]
    fn unit_blocks_are_iid_resampling() {
        // With ℓ = 1 every position is an independent uniform draw.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let draws: Vec<usize> = (0..2000).flat_map(|_| fixed_block_indices(4, 1, &mut rng)).collect();
        for k in 0..4 {
            let freq = draws.iter().filter(|&&i| i == k).count() as f64 / draws.len() as f64;
            assert!((freq - 0.25).abs() < 0.02);
        }
    }

    #[test]
    fn deterministic_and_constant_series() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data: Vec<f64> = (0..50).map(|_| rng.sample(StandardNormal)).collect();
        let z = series(&data);
        let cfg = BootstrapConfig { resamples: 200, seed: 3, ..Default::default() };
        assert_eq!(
            stationary_bootstrap(&z, |m| m[0], &cfg).unwrap(),
            stationary_bootstrap(&z, |m| m[0], &cfg).unwrap()
        );
        let flat = series(&[2.5; 30]);
        let s = stationary_bootstrap(&flat, |m| m[0], &cfg).unwrap();
        assert_eq!(s.std_dev, 0.0);
        assert!(s.quantile_ci.0 <= s.quantile_ci.1);
    }

    #[test]
    fn stationary_unit_mean_tracks_iid_spread() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data: Vec<f64> = (0..400).map(|_| rng.sample(StandardNormal)).collect();
        let z = series(&data);
        let cfg = BootstrapConfig { block_length: Some(1.0), resamples: 2000, ..Default::default() };
        let st = stationary_bootstrap(&z, |m| m[0], &cfg).unwrap();
        let fx = block_bootstrap(&z, |m| m[0], &cfg).unwrap();
        assert!((st.std_dev / fx.std_dev - 1.0).abs() < 0.1);
        assert!((st.std_dev - 1.0 / 20.0).abs() < 0.01);
    }

    #[test]
    fn z_table() {
        assert_eq!(z_alpha(0.1).unwrap(), 1.28);
        assert_eq!(z_alpha(0.05).unwrap(), 1.64);
        assert_eq!(z_alpha(0.01).unwrap(), 2.33);
        assert!((z_alpha(0.025).unwrap() - 1.959964).abs() < 1e-5);
        assert!(z_alpha(0.0).is_err());
    }

    #[test]
    fn skill_examples() {
        let e = [1.0, -2.0, 0.5, 3.0];
        let cfg = BootstrapConfig { resamples: 100, ..Default::default() };
        let same = skill_test(&e, &e, &cfg, 0.1).unwrap();
        assert_eq!(same.skill, 0.0);
        assert!(!same.significant);

        let e1 = vec![9.9; 40];
        let e2 = vec![10.9; 40];
        let s = skill_test(&e1, &e2, &cfg, 0.1).unwrap();
        assert!((s.skill - 0.0917).abs() < 1e-4);

        let half: Vec<f64> = e.iter().map(|v| v * 2.0).collect();
        assert!((skill_test(&e, &half, &cfg, 0.1).unwrap().skill - 0.5).abs() < 1e-12);
        assert!(skill_test(&e, &[0.0; 4], &cfg, 0.1).is_err());
    }

    #[test]
    fn skill_sign_follows_mae_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cfg = BootstrapConfig { resamples: 20, ..Default::default() };
        for _ in 0..50 {
            let a: Vec<f64> = (0..20).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let b: Vec<f64> = (0..20).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let s = skill_test(&a, &b, &cfg, 0.1).unwrap();
            assert_eq!(s.skill > 0.0, s.mae1 < s.mae2);
        }
    }

    #[test]
    fn report_layout() {
        let y = [10.0, 12.0, 11.0, 13.0, 9.0, 10.5];
        let f = vec![
            ("a".to_string(), vec![10.5, 11.5, 11.0, 12.0, 9.5, 10.0]),
            ("b".to_string(), y.to_vec()),
        ];
        let rows = metric_report(&y, &f, &BootstrapConfig { resamples: 50, ..Default::default() }).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows[0].rmse > 0.0 && rows[0].mape.unwrap() > 0.0);
        assert_eq!(rows[1].rmse, 0.0);
        assert_eq!(rows[1].rmse_sd, 0.0);
    }
}
