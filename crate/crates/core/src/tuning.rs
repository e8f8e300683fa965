//! Grid search over penalty weights, frequency cutoffs and hierarchy
//! trust weights, scored on a validation window.

use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Rescaled;
use crate::error::{Error, ErrorCategory, Result};
use crate::features::FeatureMapSpec;
use crate::hierarchy::{
    fit_weakl_bu, fit_weakl_g, fit_weakl_t, level_errors, HierEstimator, HierFit, Hierarchy, NodeInputs,
    TransferSpec,
};
use crate::shape::{fit_additive, AdditiveModel, Effect};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub name: String,
    pub values: Vec<f64>,
}

/// Cartesian product of named axes, enumerated with the first axis
/// varying slowest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub axes: Vec<GridAxis>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub index: usize,
    pub values: Vec<(String, f64)>,
}

impl GridPoint {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }
}

impl GridSpec {
    pub fn new(axes: Vec<GridAxis>) -> Result<Self> {
        let grid = GridSpec { axes };
        grid.validate()?;
        Ok(grid)
    }

    pub fn axis(name: &str, values: &[f64]) -> GridAxis {
        GridAxis {
            name: name.into(),
            values: values.to_vec(),
        }
    }

    /// `count` values spaced evenly in log scale from `lo` to `hi`.
    pub fn log_axis(name: &str, lo: f64, hi: f64, count: usize) -> GridAxis {
        let values = if count == 1 {
            vec![lo]
        } else {
            let (a, b) = (lo.ln(), hi.ln());
            (0..count)
                .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
                .collect()
        };
        GridAxis { name: name.into(), values }
    }

    pub fn validate(&self) -> Result<()> {
        if self.axes.is_empty() {
            return Err(Error::Config("grid has no axes".into()));
        }
        for (i, a) in self.axes.iter().enumerate() {
            if a.values.is_empty() {
                return Err(Error::Config(format!("grid axis {:?} is empty", a.name)));
            }
            if a.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config(format!("grid axis {:?} has a non-finite value", a.name)));
            }
            if self.axes[..i].iter().any(|b| b.name == a.name) {
                return Err(Error::Config(format!("grid axis {:?} appears twice", a.name)));
            }
        }
        Ok(())
    }

    pub fn size(&self) -> usize {
        self.axes.iter().map(|a| a.values.len()).product()
    }

    pub fn point(&self, index: usize) -> GridPoint {
        let mut rem = index;
        let mut values = vec![(String::new(), 0.0); self.axes.len()];
        for (slot, axis) in values.iter_mut().zip(&self.axes).rev() {
            let len = axis.values.len();
            *slot = (axis.name.clone(), axis.values[rem % len]);
            rem /= len;
        }
        GridPoint { index, values }
    }

    pub fn points(&self) -> Vec<GridPoint> {
        (0..self.size()).map(|i| self.point(i)).collect()
    }
}

/// A model class fitted at a grid point and scored on held-out data.
pub trait ModelFamily: Sync {
    type Data: Sync;
    type Model;

    fn fit(&self, point: &GridPoint, train: &Self::Data) -> Result<Self::Model>;

    /// Validation mean squared error.
    fn score(&self, model: &Self::Model, validation: &Self::Data) -> Result<f64>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneRow {
    pub point: GridPoint,
    /// `+∞` when the point could not be fitted.
    pub mse: f64,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TuneResult {
    pub best: GridPoint,
    pub best_mse: f64,
    pub rows: Vec<TuneRow>,
    pub elapsed_secs: f64,
}

impl TuneResult {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv_to(std::fs::File::create(path)?)
    }

    /// One row per grid point in enumeration order.
    pub fn write_csv_to<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["index".to_string()];
        header.extend(self.best.values.iter().map(|(n, _)| n.clone()));
        header.extend(["mse".to_string(), "failure".to_string()]);
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.point.index.to_string()];
            rec.extend(r.point.values.iter().map(|(_, v)| v.to_string()));
            rec.push(if r.mse.is_finite() { format!("{:.12e}", r.mse) } else { "inf".into() });
            rec.push(r.failure.clone().unwrap_or_default());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Fits every grid point on `train` and keeps the lowest validation
/// MSE, breaking ties by enumeration order. Numerical failures score
/// `+∞`; configuration and data errors abort.
pub fn grid_search<F: ModelFamily>(
    family: &F,
    grid: &GridSpec,
    train: &F::Data,
    validation: &F::Data,
) -> Result<TuneResult> {
    grid.validate()?;
    let start = Instant::now();
    let rows: Vec<TuneRow> = grid
        .points()
        .into_par_iter()
        .map(|point| {
            let outcome = family.fit(&point, train).and_then(|m| family.score(&m, validation));
            match outcome {
                Ok(mse) if mse.is_finite() => Ok(TuneRow { point, mse, failure: None }),
                Ok(mse) => Ok(TuneRow {
                    point,
                    mse: f64::INFINITY,
                    failure: Some(format!("non-finite validation score {mse}")),
                }),
                Err(e) if e.category() == ErrorCategory::Numerical => {
                    log::warn!("grid point {} failed: {e}", point.index);
                    Ok(TuneRow {
                        point,
                        mse: f64::INFINITY,
                        failure: Some(e.to_string()),
                    })
                }
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    let best = rows
        .iter()
        .fold(None::<&TuneRow>, |acc, r| match acc {
            Some(b) if b.mse <= r.mse => Some(b),
            _ => Some(r),
        })
        .expect("grid is non-empty");
    if !best.mse.is_finite() {
        return Err(Error::NonFinite("no grid point could be fitted".into()));
    }
    Ok(TuneResult {
        best: best.point.clone(),
        best_mse: best.mse,
        elapsed_secs: start.elapsed().as_secs_f64(),
        rows,
    })
}

/// Refits the selected point on `merged`, typically train ∪ validation.
pub fn refit_best<F: ModelFamily>(family: &F, result: &TuneResult, merged: &F::Data) -> Result<F::Model> {
    family.fit(&result.best, merged)
}

fn non_negative_int(name: &str, v: f64) -> Result<usize> {
    if v < 0.0 || v.fract() != 0.0 {
        return Err(Error::Config(format!("axis {name:?} needs non-negative integers, got {v}")));
    }
    Ok(v as usize)
}

/// Applies `lambda:<effect>` and `m:<effect>` axes to a list of effects.
pub fn apply_effect_axes(effects: &[Effect], point: &GridPoint) -> Result<Vec<Effect>> {
    let mut out = effects.to_vec();
    for (name, v) in &point.values {
        let Some((kind, target)) = name.split_once(':') else { continue };
        if kind != "lambda" && kind != "m" {
            continue;
        }
        let e = out
            .iter_mut()
            .find(|e| e.name == target)
            .ok_or_else(|| Error::Config(format!("axis {name:?} names no effect")))?;
        if kind == "lambda" {
            e.lambda = *v;
        } else {
            match &mut e.map {
                FeatureMapSpec::Fourier { m, .. } => *m = non_negative_int(name, *v)?,
                _ => return Err(Error::Config(format!("axis {name:?} targets a non-Fourier effect"))),
            }
        }
    }
    Ok(out)
}

fn check_axes(point: &GridPoint, allowed: &[&str]) -> Result<()> {
    for (name, _) in &point.values {
        let kind = name.split_once(':').map_or(name.as_str(), |(k, _)| k);
        if !allowed.contains(&kind) {
            return Err(Error::Config(format!("axis {name:?} does not apply to this model family")));
        }
    }
    Ok(())
}

/// Additive models on the first target column.
#[derive(Debug, Clone)]
pub struct AdditiveFamily {
    pub effects: Vec<Effect>,
}

fn first_target(data: &Rescaled) -> Result<Vec<f64>> {
    if data.targets.ncols() != 1 {
        return Err(Error::shape("one target column", data.targets.ncols()));
    }
    Ok(data.targets.column(0).iter().copied().collect())
}

impl ModelFamily for AdditiveFamily {
    type Data = Rescaled;
    type Model = AdditiveModel;

    fn fit(&self, point: &GridPoint, train: &Rescaled) -> Result<AdditiveModel> {
        check_axes(point, &["lambda", "m"])?;
        let effects = apply_effect_axes(&self.effects, point)?;
        fit_additive(&train.features, &first_target(train)?, &effects)
    }

    fn score(&self, model: &AdditiveModel, validation: &Rescaled) -> Result<f64> {
        let y = first_target(validation)?;
        let p = model.predict(&validation.features)?;
        Ok(crate::evaluation::metrics(&y, &p.values)?.mse)
    }
}

/// Per-node features and all-node targets of a hierarchy.
#[derive(Debug, Clone)]
pub struct HierData {
    /// One `n × d_ℓ` matrix per node in hierarchy order.
    pub features: Vec<DMatrix<f64>>,
    pub targets: DMatrix<f64>,
}

/// Hierarchical estimators tuned over per-level trust weights
/// (`weight:<level>`), transfer strength (`transfer`) and effect axes
/// shared by every node. Scored by the all-level MSE.
#[derive(Debug, Clone)]
pub struct HierFamily {
    pub estimator: HierEstimator,
    pub hierarchy: Hierarchy,
    /// Effects per modeled node (bottom nodes for BU and T).
    pub node_effects: Vec<Vec<Effect>>,
    /// Default per-node weight diagonal (`Λ` or `Γ`).
    pub weights: Vec<f64>,
    pub transfer: Option<TransferSpec>,
}

impl HierFamily {
    fn modeled(&self) -> usize {
        match self.estimator {
            HierEstimator::G => self.hierarchy.n_nodes(),
            _ => self.hierarchy.n_bottom(),
        }
    }

    fn inputs(&self, point: &GridPoint, data: &HierData) -> Result<Vec<NodeInputs>> {
        if data.features.len() != self.hierarchy.n_nodes() {
            return Err(Error::shape(
                format!("{} node feature matrices", self.hierarchy.n_nodes()),
                data.features.len(),
            ));
        }
        self.node_effects
            .iter()
            .zip(&data.features)
            .take(self.modeled())
            .map(|(effects, x)| {
                Ok(NodeInputs {
                    features: x.clone(),
                    effects: apply_effect_axes(effects, point)?,
                })
            })
            .collect()
    }

    fn weights_at(&self, point: &GridPoint) -> Result<Vec<f64>> {
        let mut w = self.weights.clone();
        for (name, v) in &point.values {
            if let Some(level) = name.strip_prefix("weight:") {
                if !self.hierarchy.level_names().iter().any(|l| l == level) {
                    return Err(Error::Config(format!("axis {name:?} names no hierarchy level")));
                }
                for (slot, l) in w.iter_mut().zip(self.hierarchy.node_levels()) {
                    if l == level {
                        *slot = *v;
                    }
                }
            }
        }
        Ok(w)
    }
}

impl ModelFamily for HierFamily {
    type Data = HierData;
    type Model = HierFit;

    fn fit(&self, point: &GridPoint, train: &HierData) -> Result<HierFit> {
        check_axes(point, &["lambda", "m", "weight", "transfer"])?;
        let nodes = self.inputs(point, train)?;
        let w = self.weights_at(point)?;
        match self.estimator {
            HierEstimator::Bu => fit_weakl_bu(&self.hierarchy, &nodes, &train.targets, &w),
            HierEstimator::G => fit_weakl_g(&self.hierarchy, &nodes, &train.targets, &w),
            HierEstimator::T => {
                let mut spec = self
                    .transfer
                    .clone()
                    .ok_or_else(|| Error::Config("transfer estimator needs a transfer set".into()))?;
                if let Some(l) = point.get("transfer") {
                    spec.lambda = l;
                }
                fit_weakl_t(&self.hierarchy, &nodes, &train.targets, &w, &spec)
            }
        }
    }

    fn score(&self, model: &HierFit, validation: &HierData) -> Result<f64> {
        let feats: Vec<DMatrix<f64>> = validation.features.iter().take(self.modeled()).cloned().collect();
        let pred = model.predict(&self.hierarchy, &feats)?;
        Ok(level_errors(&self.hierarchy, &pred, &validation.targets)?.all)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Scores a point by a fixed table; `NaN` entries fail numerically.
    struct Table(Vec<f64>);

    impl ModelFamily for Table {
        type Data = ();
        type Model = f64;

        fn fit(&self, point: &GridPoint, _: &()) -> Result<f64> {
            let v = self.0[point.index];
            if v.is_nan() {
                Err(Error::SingularGram { zero_penalty_blocks: vec![] })
            } else {
                Ok(v)
            }
        }

        fn score(&self, model: &f64, _: &()) -> Result<f64> {
            Ok(*model)
        }
    }

    #[test]
    fn enumeration_order() {
        let g = GridSpec::new(vec![GridSpec::axis("a", &[1.0, 2.0]), GridSpec::axis("b", &[10.0, 20.0, 30.0])])
            .unwrap();
        assert_eq!(g.size(), 6);
        let p = g.point(1);
        assert_eq!(p.values, vec![("a".into(), 1.0), ("b".into(), 20.0)]);
        assert_eq!(g.point(3).get("a"), Some(2.0));
        assert!(GridSpec::new(vec![GridSpec::axis("a", &[])]).is_err());
        assert!(GridSpec::new(vec![]).is_err());
        let l = GridSpec::log_axis("w", 0.01, 100.0, 5);
        assert!((l.values[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ties_and_failures() {
        let g = GridSpec::new(vec![GridSpec::axis("a", &[0.0, 1.0, 2.0, 3.0])]).unwrap();
        let r = grid_search(&Table(vec![f64::NAN, 0.5, 0.2, 0.2]), &g, &(), &()).unwrap();
        assert_eq!(r.best.index, 2);
        assert_eq!(r.best_mse, 0.2);
        assert_eq!(r.rows[0].mse, f64::INFINITY);
        assert!(r.rows[0].failure.is_some());
        assert_eq!(r.rows.iter().map(|r| r.point.index).collect::<Vec<_>>(), vec![0, 1, 2, 3]);

        let single = GridSpec::new(vec![GridSpec::axis("a", &[7.0])]).unwrap();
        assert_eq!(grid_search(&Table(vec![3.0]), &single, &(), &()).unwrap().best.get("a"), Some(7.0));
        assert!(grid_search(&Table(vec![f64::NAN]), &single, &(), &()).is_err());
    }

    fn linear_data(x: &[f64], slope: f64) -> Rescaled {
        Rescaled {
            times: x.to_vec(),
            features: DMatrix::from_column_slice(x.len(), 1, x),
            targets: DMatrix::from_iterator(x.len(), 1, x.iter().map(|v| slope * v)),
        }
    }

    #[test]
    fn noiseless_interpolation_wins() {
        let fam = AdditiveFamily {
            effects: vec![Effect::new("x", FeatureMapSpec::linear(0), 1.0)],
        };
        let train = linear_data(&[0.1, 0.5, -0.3, 1.0], 2.0);
        let val = linear_data(&[0.2, -0.7], 2.0);
        let g = GridSpec::new(vec![GridSpec::axis("lambda:x", &[10.0, 0.0])]).unwrap();
        let r = grid_search(&fam, &g, &train, &val).unwrap();
        assert_eq!(r.best.index, 1);
        assert!(r.best_mse < 1e-20);

        let bad = GridSpec::new(vec![GridSpec::axis("lambda:nope", &[1.0])]).unwrap();
        assert!(matches!(grid_search(&fam, &bad, &train, &val), Err(Error::Config(_))));
    }

    #[test]
    fn refit_equals_direct_fit() {
        let fam = AdditiveFamily {
            effects: vec![Effect::new("x", FeatureMapSpec::fourier(0, 2), 1.0)],
        };
        let train = linear_data(&[0.1, 0.5, -0.3, 1.0, 2.0, -2.5], 1.5);
        let val = linear_data(&[0.2, -0.7], 1.5);
        let g = GridSpec::new(vec![GridSpec::axis("lambda:x", &[0.01]), GridSpec::axis("m:x", &[1.0])]).unwrap();
        let r = grid_search(&fam, &g, &train, &val).unwrap();
        let refit = refit_best(&fam, &r, &train).unwrap();
        let direct = fit_additive(
            &train.features,
            &train.targets.column(0).iter().copied().collect::<Vec<_>>(),
            &[Effect::new("x", FeatureMapSpec::fourier(0, 1), 0.01)],
        )
        .unwrap();
        assert_eq!(refit.theta, direct.theta);
        let again = refit_best(&fam, &r, &train).unwrap();
        assert_eq!(again.theta, refit.theta);
        assert_eq!(refit.theta.len(), 3);
    }
}
