use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::estimators::{fit_weakl_bu, NodeInputs};
use super::reconcile::{mint_projection, ols_projection, residual_covariance, shrink_toward_diagonal};
use super::{Hierarchy, NodeRecord};
use crate::constraints::PenaltyMatrix;
use crate::error::{Error, Result};
use crate::features::FeatureMapSpec;
use crate::rng::stream;
use crate::shape::Effect;
use crate::solver::{fit_weakl, WeaklProblem};
use crate::complexify;

/// Two bottom series `y1`, `y2` under their sum.
pub fn toy_hierarchy() -> Hierarchy {
    Hierarchy::from_records(&[
        NodeRecord::new("y1", Some("total"), "bottom"),
        NodeRecord::new("y2", Some("total"), "bottom"),
        NodeRecord::new("total", None, "total"),
    ])
    .expect("toy hierarchy")
}

/// One draw of the two-leaf linear hierarchy; the first `n_train` rows
/// are training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyData {
    pub x1: DMatrix<f64>,
    pub x2: DMatrix<f64>,
    /// Columns `y1`, `y2`, `y1 + y2`.
    pub targets: DMatrix<f64>,
    pub n_train: usize,
}

impl ToyData {
    pub fn n_test(&self) -> usize {
        self.targets.nrows() - self.n_train
    }

    /// `(X1 | X2)`.
    pub fn joint(&self) -> DMatrix<f64> {
        let (n, d) = self.x1.shape();
        DMatrix::from_fn(n, 2 * d, |i, j| if j < d { self.x1[(i, j)] } else { self.x2[(i, j - d)] })
    }
}

fn normals(rng: &mut impl Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn normal_vec(rng: &mut impl Rng, len: usize) -> nalgebra::DVector<f64> {
    nalgebra::DVector::from_fn(len, |_, _| rng.sample(StandardNormal))
}

/// Draws with `σ1 = 1`. Standard normals are drawn in a fixed order and
/// the second noise is scaled afterwards, so different `σ2` share every
/// other random quantity for a given stream.
fn draw(rng: &mut impl Rng, d: usize, n_train: usize, n_test: usize, sigma2: f64) -> ToyData {
    let n = n_train + n_test;
    let theta1 = normal_vec(rng, d);
    let theta2 = normal_vec(rng, d);
    // Row-major draws: one feature vector per observation.
    let x1 = normals(rng, d, n).transpose();
    let x2 = normals(rng, d, n).transpose();
    let e1 = normal_vec(rng, n);
    let e2 = normal_vec(rng, n) * sigma2;
    let y1 = &x1 * theta1 + &e1;
    let y2 = &x2 * theta2 - &e1 + e2;
    let mut targets = DMatrix::zeros(n, 3);
    targets.set_column(0, &y1);
    targets.set_column(1, &y2);
    targets.set_column(2, &(y1 + y2));
    ToyData { x1, x2, targets, n_train }
}

fn check_toy(d: usize, n_train: usize, n_test: usize, sigma2: f64) -> Result<()> {
    if d == 0 || n_train == 0 {
        return Err(Error::Config("toy hierarchy needs d ≥ 1 and training rows".into()));
    }
    if !(0.0..=1.0).contains(&sigma2) {
        return Err(Error::Config(format!("σ2 = {sigma2} outside [0, 1]")));
    }
    let _ = n_test;
    Ok(())
}

/// Deterministic toy dataset for `seed`; equal to run 0 of a benchmark
/// with the same seed.
pub fn gen_toy_hierarchy(d: usize, n_train: usize, n_test: usize, sigma2: f64, seed: u64) -> Result<ToyData> {
    check_toy(d, n_train, n_test, sigma2)?;
    Ok(draw(&mut stream(seed, 0), d, n_train, n_test, sigma2))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ToyMethod {
    /// Separate OLS on each leaf, summed.
    Bu,
    /// Independent OLS on all three nodes, projected orthogonally.
    Rec,
    /// Independent OLS on all three nodes, projected with MinT.
    Mint,
    /// Bottom-up WeaKL with aggregate weight `λ = σ2⁻²`.
    Weakl,
    /// OLS of the aggregate on `(X1 | X2)`, scored on the aggregate only.
    OlsAggregate,
}

impl ToyMethod {
    pub const ALL: [ToyMethod; 5] = [
        ToyMethod::Bu,
        ToyMethod::Rec,
        ToyMethod::Mint,
        ToyMethod::Weakl,
        ToyMethod::OlsAggregate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ToyMethod::Bu => "bu",
            ToyMethod::Rec => "rec",
            ToyMethod::Mint => "mint",
            ToyMethod::Weakl => "weakl",
            ToyMethod::OlsAggregate => "ols-aggregate",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub d: usize,
    #[serde(default = "default_train")]
    pub n_train: usize,
    #[serde(default = "default_test")]
    pub n_test: usize,
    pub sigma2: Vec<f64>,
    pub runs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_methods")]
    pub methods: Vec<ToyMethod>,
    #[serde(default = "default_shrinkage")]
    pub mint_shrinkage: f64,
}

fn default_train() -> usize {
    80
}
fn default_test() -> usize {
    20
}
fn default_methods() -> Vec<ToyMethod> {
    ToyMethod::ALL.to_vec()
}
fn default_shrinkage() -> f64 {
    super::DEFAULT_MINT_SHRINKAGE
}

impl ToyConfig {
    pub fn new(d: usize, sigma2: Vec<f64>, runs: usize, seed: u64) -> Self {
        ToyConfig {
            d,
            n_train: default_train(),
            n_test: default_test(),
            sigma2,
            runs,
            seed,
            methods: default_methods(),
            mint_shrinkage: default_shrinkage(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for &s in &self.sigma2 {
            check_toy(self.d, self.n_train, self.n_test, s)?;
            if s == 0.0 && self.methods.contains(&ToyMethod::Weakl) {
                return Err(Error::Config("the WeaKL weight σ2⁻² needs σ2 > 0".into()));
            }
        }
        if self.sigma2.is_empty() || self.runs == 0 || self.n_test == 0 {
            return Err(Error::Config("benchmark needs σ2 values, runs and test rows".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("benchmark needs at least one method".into()));
        }
        if !(0.0..=1.0).contains(&self.mint_shrinkage) {
            return Err(Error::Config("mint shrinkage outside [0, 1]".into()));
        }
        Ok(())
    }
}

/// Mean test MSEs of one method at one `σ2`, averaged over runs. Node
/// errors are absent for methods that do not forecast that node, and all
/// errors are absent when the method is inapplicable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyRow {
    pub sigma2: f64,
    pub method: ToyMethod,
    pub applicable: bool,
    pub mse_y1: Option<f64>,
    pub mse_y2: Option<f64>,
    pub mse_total: Option<f64>,
    pub hierarchical: Option<f64>,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyBenchmark {
    pub config: ToyConfig,
    pub rows: Vec<ToyRow>,
}

impl ToyBenchmark {
    pub fn row(&self, sigma2: f64, method: ToyMethod) -> Option<&ToyRow> {
        self.rows.iter().find(|r| r.sigma2 == sigma2 && r.method == method)
    }

    pub fn write_csv(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["sigma2", "method", "applicable", "mse_y1", "mse_y2", "mse_total", "hierarchical", "runs"])?;
        let f = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.12e}"));
        for r in &self.rows {
            w.write_record([
                r.sigma2.to_string(),
                r.method.name().to_string(),
                r.applicable.to_string(),
                f(r.mse_y1),
                f(r.mse_y2),
                f(r.mse_total),
                f(r.hierarchical),
                r.runs.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn linear_effects(d: usize) -> Vec<Effect> {
    (0..d)
        .map(|j| Effect::new(format!("x{j}"), FeatureMapSpec::linear(j), 0.0))
        .collect()
}

fn rows(m: &DMatrix<f64>, r: std::ops::Range<usize>) -> DMatrix<f64> {
    m.rows(r.start, r.len()).into_owned()
}

/// Unpenalized least squares through the solver; `None` when the Gram
/// matrix is singular.
fn ols(x: &DMatrix<f64>, y: &[f64]) -> Result<Option<nalgebra::DVector<f64>>> {
    let problem = WeaklProblem::stacked(complexify(x), y, PenaltyMatrix::zero(x.ncols()));
    match fit_weakl(&problem) {
        Ok(sol) => Ok(Some(sol.theta.map(|v| v.re))),
        Err(Error::SingularGram { .. }) | Err(Error::RankDeficient { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

fn node_mse(pred: &DMatrix<f64>, truth: &DMatrix<f64>) -> [f64; 3] {
    let n = truth.nrows() as f64;
    let mut out = [0.0; 3];
    for (j, v) in out.iter_mut().enumerate() {
        *v = (0..truth.nrows()).map(|t| (pred[(t, j)] - truth[(t, j)]).powi(2)).sum::<f64>() / n;
    }
    out
}

/// Per-method test MSEs on one dataset; `None` marks inapplicable.
fn score_run(data: &ToyData, sigma2: f64, config: &ToyConfig) -> Result<Vec<Option<[f64; 3]>>> {
    let h = toy_hierarchy();
    let n = data.n_train;
    let total = data.targets.nrows();
    let train = 0..n;
    let test = n..total;
    let y_train = rows(&data.targets, train.clone());
    let y_test = rows(&data.targets, test.clone());
    let d = data.x1.ncols();
    let nodes = |x1: DMatrix<f64>, x2: DMatrix<f64>| {
        [
            NodeInputs { features: x1, effects: linear_effects(d) },
            NodeInputs { features: x2, effects: linear_effects(d) },
        ]
    };
    let train_nodes = nodes(rows(&data.x1, train.clone()), rows(&data.x2, train.clone()));
    let test_feats = [rows(&data.x1, test.clone()), rows(&data.x2, test.clone())];

    let needs = |m: ToyMethod| config.methods.contains(&m);
    let bu_fit = fit_weakl_bu(&h, &train_nodes, &y_train, &[1.0, 1.0, 0.0])?;
    let bu_test = bu_fit.predict(&h, &test_feats)?;

    let joint = data.joint();
    let needs_joint = needs(ToyMethod::Rec) || needs(ToyMethod::Mint) || needs(ToyMethod::OlsAggregate);
    let joint_fit = if needs_joint {
        let y3: Vec<f64> = y_train.column(2).iter().copied().collect();
        ols(&rows(&joint, train.clone()), &y3)?
    } else {
        None
    };
    let base = |range: std::ops::Range<usize>, bu: &DMatrix<f64>, beta: &nalgebra::DVector<f64>| {
        let agg = rows(&joint, range) * beta;
        let mut m = bu.clone();
        m.set_column(2, &agg);
        m
    };

    let mut out = Vec::with_capacity(config.methods.len());
    for &method in &config.methods {
        let score = match method {
            ToyMethod::Bu => Some(node_mse(&bu_test, &y_test)),
            ToyMethod::Weakl => {
                let lambda = sigma2.powi(-2);
                let fit = fit_weakl_bu(&h, &train_nodes, &y_train, &[1.0, 1.0, lambda.sqrt()])?;
                Some(node_mse(&fit.predict(&h, &test_feats)?, &y_test))
            }
            ToyMethod::OlsAggregate => joint_fit.as_ref().map(|beta| {
                let pred = base(test.clone(), &bu_test, beta);
                [f64::NAN, f64::NAN, node_mse(&pred, &y_test)[2]]
            }),
            ToyMethod::Rec | ToyMethod::Mint => match &joint_fit {
                None => None,
                Some(beta) => {
                    let base_test = base(test.clone(), &bu_test, beta);
                    let projection = if method == ToyMethod::Rec {
                        ols_projection(h.summation())?
                    } else {
                        let bu_train = bu_fit.predict(&h, &[
                            train_nodes[0].features.clone(),
                            train_nodes[1].features.clone(),
                        ])?;
                        let base_train = base(train.clone(), &bu_train, beta);
                        let w = residual_covariance(&(&y_train - base_train))?;
                        mint_projection(h.summation(), &shrink_toward_diagonal(&w, config.mint_shrinkage))?
                    };
                    Some(node_mse(&(base_test * projection.transpose()), &y_test))
                }
            },
        };
        out.push(score);
    }
    Ok(out)
}

/// Monte Carlo comparison on the toy hierarchy. Run `r` draws from stream
/// `(seed, r)` and the table is independent of thread scheduling.
pub fn run_toy_benchmark(config: &ToyConfig) -> Result<ToyBenchmark> {
    config.validate()?;
    let per_run: Vec<Vec<Vec<Option<[f64; 3]>>>> = (0..config.runs)
        .into_par_iter()
        .map(|r| {
            config
                .sigma2
                .iter()
                .map(|&s| {
                    let data = draw(&mut stream(config.seed, r as u64), config.d, config.n_train, config.n_test, s);
                    score_run(&data, s, config)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let mut table = Vec::new();
    for (si, &sigma2) in config.sigma2.iter().enumerate() {
        for (mi, &method) in config.methods.iter().enumerate() {
            let scores: Vec<Option<[f64; 3]>> = per_run.iter().map(|run| run[si][mi]).collect();
            let applicable = scores.iter().all(Option::is_some);
            let mut sums = [0.0; 3];
            if applicable {
                for s in scores.iter().flatten() {
                    for k in 0..3 {
                        sums[k] += s[k];
                    }
                }
            }
            let runs = config.runs as f64;
            let mean = |k: usize| {
                let v = sums[k] / runs;
                (applicable && v.is_finite()).then_some(v)
            };
            let (y1, y2, tot) = (mean(0), mean(1), mean(2));
            let hierarchical = match (y1, y2, tot) {
                (Some(a), Some(b), Some(c)) => Some(a + b + c),
                _ => None,
            };
            table.push(ToyRow {
                sigma2,
                method,
                applicable,
                mse_y1: y1,
                mse_y2: y2,
                mse_total: tot,
                hierarchical,
                runs: config.runs,
            });
        }
    }
    Ok(ToyBenchmark { config: config.clone(), rows: table })
}
