//! Datasets, torus rescaling, time-ordered splits and group partitions.
//!
//! Raw columns are kept as ingested. A [`Scaling`] fitted on the training
//! window maps numeric columns and timestamps affinely onto `[-π, π]` and
//! categorical levels onto evenly spaced points of the same interval. Splits
//! share one `Arc<Scaling>`, so no statistic from validation or test rows
//! reaches the fitted maps.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::ops::Range;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    /// Real-valued, rescaled onto the torus.
    Numeric,
    /// Finite set of labels.
    Categorical,
    /// Real-valued and left in its original units (e.g. expert forecasts).
    Passthrough,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    Numeric(Vec<f64>),
    Categorical(Vec<String>),
    Passthrough(Vec<f64>),
}

impl Column {
    pub fn kind(&self) -> ColumnKind {
        match self {
            Column::Numeric(_) => ColumnKind::Numeric,
            Column::Categorical(_) => ColumnKind::Categorical,
            Column::Passthrough(_) => ColumnKind::Passthrough,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Column::Numeric(v) | Column::Passthrough(v) => v.len(),
            Column::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn select(&self, rows: &[usize]) -> Column {
        match self {
            Column::Numeric(v) => Column::Numeric(rows.iter().map(|&i| v[i]).collect()),
            Column::Passthrough(v) => Column::Passthrough(rows.iter().map(|&i| v[i]).collect()),
            Column::Categorical(v) => {
                Column::Categorical(rows.iter().map(|&i| v[i].clone()).collect())
            }
        }
    }

    fn append(&mut self, other: &Column) -> Result<()> {
        match (self, other) {
            (Column::Numeric(a), Column::Numeric(b))
            | (Column::Passthrough(a), Column::Passthrough(b)) => a.extend_from_slice(b),
            (Column::Categorical(a), Column::Categorical(b)) => a.extend_from_slice(b),
            _ => return Err(Error::Data("column kinds differ".into())),
        }
        Ok(())
    }
}

/// Affine map sending the train range `[min, max]` onto `[-π, π]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rescaler {
    pub min: f64,
    pub max: f64,
}

impl Rescaler {
    /// Fits on the observed range. Panics on an empty column.
    pub fn fit(values: &[f64]) -> Self {
        assert!(!values.is_empty(), "cannot fit a rescaler on an empty column");
        let (min, max) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        Rescaler { min, max }
    }

    pub fn is_degenerate(&self) -> bool {
        self.max <= self.min
    }

    pub fn apply(&self, x: f64) -> f64 {
        if self.is_degenerate() {
            return 0.0;
        }
        let a = 2.0 * PI / (self.max - self.min);
        a * (x - self.min) - PI
    }

    pub fn invert(&self, y: f64) -> f64 {
        if self.is_degenerate() {
            return self.min;
        }
        (y + PI) * (self.max - self.min) / (2.0 * PI) + self.min
    }
}

/// Bijection between categorical labels and indices `1..=|E|`.
///
/// Levels are either declared up front or recorded in order of first
/// appearance in the training rows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryMap {
    pub levels: Vec<String>,
}

impl CategoryMap {
    pub fn fit(values: &[String]) -> Self {
        let mut levels: Vec<String> = Vec::new();
        for v in values {
            if !levels.contains(v) {
                levels.push(v.clone());
            }
        }
        CategoryMap { levels }
    }

    pub fn cardinality(&self) -> usize {
        self.levels.len()
    }

    /// One-based index of `value`.
    pub fn index(&self, column: &str, value: &str) -> Result<usize> {
        self.levels
            .iter()
            .position(|l| l == value)
            .map(|i| i + 1)
            .ok_or_else(|| Error::UnknownCategory {
                column: column.to_string(),
                value: value.to_string(),
            })
    }

    pub fn position(&self, column: &str, value: &str) -> Result<f64> {
        Ok(category_position(self.index(column, value)?, self.cardinality()))
    }
}

/// Torus coordinate of the one-based category `index` among `cardinality`
/// levels: indices are spread affinely from `-π` to `π`.
pub fn category_position(index: usize, cardinality: usize) -> f64 {
    if cardinality <= 1 {
        return 0.0;
    }
    -PI + 2.0 * PI * (index as f64 - 1.0) / (cardinality as f64 - 1.0)
}

/// Inverse of [`category_position`]; `None` when `x` is not on a level.
pub fn category_index(x: f64, cardinality: usize) -> Option<usize> {
    if cardinality <= 1 {
        return (x.abs() < 1e-9).then_some(1);
    }
    let raw = (x + PI) * (cardinality as f64 - 1.0) / (2.0 * PI) + 1.0;
    let idx = raw.round();
    if (raw - idx).abs() > 1e-7 || idx < 1.0 || idx > cardinality as f64 {
        None
    } else {
        Some(idx as usize)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ColumnScaling {
    Numeric { rescaler: Rescaler },
    Categorical { map: CategoryMap },
    Passthrough,
}

/// Train-fitted transforms for every feature column and for time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub time: Rescaler,
    pub columns: Vec<(String, ColumnScaling)>,
}

impl Scaling {
    /// Fits column transforms on `train` and the time map on
    /// `[first train timestamp, horizon_end]`.
    pub fn fit(train: &Dataset, horizon_end: f64) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Split("training window is empty".into()));
        }
        let t0 = train.timestamps[0];
        let time = Rescaler {
            min: t0,
            max: horizon_end.max(t0),
        };
        let columns = train
            .features
            .iter()
            .map(|(name, col)| {
                let s = match col {
                    Column::Numeric(v) => ColumnScaling::Numeric {
                        rescaler: Rescaler::fit(v),
                    },
                    Column::Categorical(v) => ColumnScaling::Categorical {
                        map: CategoryMap::fit(v),
                    },
                    Column::Passthrough(_) => ColumnScaling::Passthrough,
                };
                (name.clone(), s)
            })
            .collect();
        Ok(Scaling { time, columns })
    }

    /// Replaces the recorded level order of a categorical column with a
    /// declared one.
    pub fn declare_levels(&mut self, column: &str, levels: Vec<String>) -> Result<()> {
        let slot = self
            .columns
            .iter_mut()
            .find(|(n, _)| n == column)
            .ok_or_else(|| Error::Config(format!("unknown column {column:?}")))?;
        match &mut slot.1 {
            ColumnScaling::Categorical { map } => {
                for seen in &map.levels {
                    if !levels.contains(seen) {
                        return Err(Error::UnknownCategory {
                            column: column.to_string(),
                            value: seen.clone(),
                        });
                    }
                }
                map.levels = levels;
                Ok(())
            }
            _ => Err(Error::Config(format!("column {column:?} is not categorical"))),
        }
    }

    pub fn cardinality(&self, column: usize) -> Option<usize> {
        match &self.columns.get(column)?.1 {
            ColumnScaling::Categorical { map } => Some(map.cardinality()),
            _ => None,
        }
    }
}

/// Time-indexed feature columns with one or more real targets.
#[derive(Debug, Clone)]
pub struct Dataset {
    timestamps: Vec<f64>,
    features: Vec<(String, Column)>,
    target_names: Vec<String>,
    targets: DMatrix<f64>,
    scaling: Option<Arc<Scaling>>,
}

/// A dataset mapped through its scaling: the numeric inputs of every model.
#[derive(Debug, Clone)]
pub struct Rescaled {
    pub times: Vec<f64>,
    /// n × d1, categorical columns replaced by their torus position.
    pub features: DMatrix<f64>,
    /// n × d2.
    pub targets: DMatrix<f64>,
}

impl Dataset {
    pub fn new(
        timestamps: Vec<f64>,
        features: Vec<(String, Column)>,
        target_names: Vec<String>,
        targets: DMatrix<f64>,
    ) -> Result<Self> {
        let n = timestamps.len();
        if n == 0 {
            return Err(Error::Data("dataset has no rows".into()));
        }
        if timestamps.iter().any(|t| !t.is_finite()) {
            return Err(Error::Data("missing or non-finite timestamp".into()));
        }
        if timestamps.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Data("timestamps must be non-decreasing".into()));
        }
        if targets.nrows() != n || targets.ncols() != target_names.len() {
            return Err(Error::shape(
                format!("{n}×{} targets", target_names.len()),
                format!("{}×{}", targets.nrows(), targets.ncols()),
            ));
        }
        if targets.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("missing or non-finite target value".into()));
        }
        for (name, col) in &features {
            if col.len() != n {
                return Err(Error::shape(
                    format!("{n} rows in column {name:?}"),
                    col.len(),
                ));
            }
            let missing = match col {
                Column::Numeric(v) | Column::Passthrough(v) => v.iter().any(|x| !x.is_finite()),
                Column::Categorical(v) => v.iter().any(|x| x.is_empty()),
            };
            if missing {
                return Err(Error::Data(format!("missing value in column {name:?}")));
            }
        }
        Ok(Dataset {
            timestamps,
            features,
            target_names,
            targets,
            scaling: None,
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn features(&self) -> &[(String, Column)] {
        &self.features
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|(n, _)| n == name)
    }

    pub fn target_names(&self) -> &[String] {
        &self.target_names
    }

    pub fn targets(&self) -> &DMatrix<f64> {
        &self.targets
    }

    pub fn target(&self, j: usize) -> Vec<f64> {
        self.targets.column(j).iter().copied().collect()
    }

    pub fn scaling(&self) -> Option<&Arc<Scaling>> {
        self.scaling.as_ref()
    }

    pub fn with_scaling(mut self, scaling: Arc<Scaling>) -> Self {
        self.scaling = Some(scaling);
        self
    }

    /// Applies the attached scaling.
    pub fn rescaled(&self) -> Result<Rescaled> {
        let scaling = self
            .scaling
            .as_ref()
            .ok_or_else(|| Error::Data("dataset has no fitted scaling".into()))?;
        self.rescale_with(scaling)
    }

    pub fn rescale_with(&self, scaling: &Scaling) -> Result<Rescaled> {
        if scaling.columns.len() != self.features.len() {
            return Err(Error::shape(
                format!("{} feature columns", scaling.columns.len()),
                self.features.len(),
            ));
        }
        let n = self.len();
        let mut features = DMatrix::zeros(n, self.features.len());
        for (j, ((name, col), (sname, sc))) in
            self.features.iter().zip(&scaling.columns).enumerate()
        {
            if name != sname {
                return Err(Error::shape(format!("column {sname:?}"), format!("{name:?}")));
            }
            match (col, sc) {
                (Column::Numeric(v), ColumnScaling::Numeric { rescaler }) => {
                    for (i, x) in v.iter().enumerate() {
                        features[(i, j)] = rescaler.apply(*x);
                    }
                }
                (Column::Passthrough(v), ColumnScaling::Passthrough) => {
                    for (i, x) in v.iter().enumerate() {
                        features[(i, j)] = *x;
                    }
                }
                (Column::Categorical(v), ColumnScaling::Categorical { map }) => {
                    for (i, x) in v.iter().enumerate() {
                        features[(i, j)] = map.position(name, x)?;
                    }
                }
                _ => {
                    return Err(Error::Data(format!(
                        "column {name:?} does not match the kind it was fitted with"
                    )))
                }
            }
        }
        Ok(Rescaled {
            times: self.timestamps.iter().map(|&t| scaling.time.apply(t)).collect(),
            features,
            targets: self.targets.clone(),
        })
    }

    /// Rows `range` in order, carrying the same scaling.
    pub fn slice(&self, range: Range<usize>) -> Dataset {
        let rows: Vec<usize> = range.collect();
        self.select(&rows)
    }

    fn select(&self, rows: &[usize]) -> Dataset {
        Dataset {
            timestamps: rows.iter().map(|&i| self.timestamps[i]).collect(),
            features: self
                .features
                .iter()
                .map(|(n, c)| (n.clone(), c.select(rows)))
                .collect(),
            target_names: self.target_names.clone(),
            targets: self.targets.select_rows(rows),
            scaling: self.scaling.clone(),
        }
    }

    /// Appends `later` after `self`; both must share the schema.
    pub fn concat(&self, later: &Dataset) -> Result<Dataset> {
        if self.target_names != later.target_names || self.features.len() != later.features.len()
        {
            return Err(Error::Data("cannot concatenate datasets with different schemas".into()));
        }
        if let (Some(a), Some(b)) = (self.timestamps.last(), later.timestamps.first()) {
            if b < a {
                return Err(Error::Data("concatenation would break time order".into()));
            }
        }
        let mut out = self.clone();
        out.timestamps.extend_from_slice(&later.timestamps);
        for ((n, a), (m, b)) in out.features.iter_mut().zip(&later.features) {
            if n != m {
                return Err(Error::Data(format!("column {n:?} vs {m:?}")));
            }
            a.append(b)?;
        }
        let d2 = self.targets.ncols();
        let mut t = DMatrix::zeros(self.len() + later.len(), d2);
        t.rows_mut(0, self.len()).copy_from(&self.targets);
        t.rows_mut(self.len(), later.len()).copy_from(&later.targets);
        out.targets = t;
        Ok(out)
    }
}

/// Half-open row intervals for the train, validation and test windows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: Range<usize>,
    pub validation: Range<usize>,
    pub test: Range<usize>,
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
    pub scaling: Arc<Scaling>,
}

/// Cuts `dataset` into train, validation and test windows and fits the
/// scaling on the training rows only.
pub fn split(dataset: &Dataset, spec: &SplitSpec) -> Result<Splits> {
    let n = dataset.len();
    let ranges = [
        ("train", &spec.train),
        ("validation", &spec.validation),
        ("test", &spec.test),
    ];
    for (name, r) in ranges {
        if r.start > r.end || r.end > n {
            return Err(Error::Split(format!(
                "{name} range {}..{} is outside 0..{n}",
                r.start, r.end
            )));
        }
    }
    if spec.train.is_empty() {
        return Err(Error::Split("training range is empty".into()));
    }
    let nonempty: Vec<_> = ranges.iter().filter(|(_, r)| !r.is_empty()).collect();
    for w in nonempty.windows(2) {
        let (a, ra) = w[0];
        let (b, rb) = w[1];
        if rb.start < ra.end {
            return Err(Error::Split(format!(
                "{a} range {}..{} overlaps or follows {b} range {}..{}",
                ra.start, ra.end, rb.start, rb.end
            )));
        }
    }

    let train = dataset.slice(spec.train.clone());
    let horizon_end = nonempty
        .iter()
        .map(|(_, r)| dataset.timestamps[r.end - 1])
        .fold(f64::NEG_INFINITY, f64::max);
    let scaling = Arc::new(Scaling::fit(&train, horizon_end)?);
    Ok(Splits {
        train: train.with_scaling(scaling.clone()),
        validation: dataset.slice(spec.validation.clone()).with_scaling(scaling.clone()),
        test: dataset.slice(spec.test.clone()).with_scaling(scaling.clone()),
        scaling,
    })
}

/// Splits rows by the value of a categorical key column, groups listed in
/// order of first appearance, row order preserved within each group.
pub fn group_partition(dataset: &Dataset, key: &str) -> Result<Vec<(String, Dataset)>> {
    let idx = dataset
        .feature_index(key)
        .ok_or_else(|| Error::Config(format!("group key column {key:?} not found")))?;
    let values = match &dataset.features[idx].1 {
        Column::Categorical(v) => v,
        _ => {
            return Err(Error::Config(format!(
                "group key column {key:?} is not categorical"
            )))
        }
    };
    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, v) in values.iter().enumerate() {
        if v.is_empty() {
            return Err(Error::Data(format!("row {i} has no value for group key {key:?}")));
        }
        let entry = rows.entry(v.as_str()).or_default();
        if entry.is_empty() {
            order.push(v.clone());
        }
        entry.push(i);
    }
    Ok(order
        .into_iter()
        .map(|k| {
            let ds = dataset.select(&rows[k.as_str()]);
            (k, ds)
        })
        .collect())
}

/// Column layout of a CSV file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub timestamp: String,
    pub targets: Vec<String>,
    /// Feature columns in model order with their declared kind.
    pub columns: Vec<(String, ColumnKind)>,
}

const MISSING_MARKERS: [&str; 5] = ["", "na", "nan", "null", "none"];

/// Reads a headed CSV file. Missing cells are rejected.
pub fn read_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Data(format!("column {name:?} not found in {}", path.display())))
    };
    let t_idx = find(&schema.timestamp)?;
    let y_idx = schema
        .targets
        .iter()
        .map(|t| find(t))
        .collect::<Result<Vec<_>>>()?;
    let x_idx = schema
        .columns
        .iter()
        .map(|(c, _)| find(c))
        .collect::<Result<Vec<_>>>()?;

    let mut timestamps = Vec::new();
    let mut targets: Vec<f64> = Vec::new();
    let mut raw: Vec<Vec<String>> = vec![Vec::new(); schema.columns.len()];
    for (row, rec) in reader.records().enumerate() {
        let rec = rec?;
        let cell = |i: usize, name: &str| -> Result<&str> {
            let v = rec.get(i).unwrap_or("").trim();
            if MISSING_MARKERS.contains(&v.to_ascii_lowercase().as_str()) {
                Err(Error::Data(format!("missing value in column {name:?} at row {row}")))
            } else {
                Ok(v)
            }
        };
        timestamps.push(parse_num(cell(t_idx, &schema.timestamp)?, &schema.timestamp, row)?);
        for (k, &i) in y_idx.iter().enumerate() {
            targets.push(parse_num(cell(i, &schema.targets[k])?, &schema.targets[k], row)?);
        }
        for (k, &i) in x_idx.iter().enumerate() {
            raw[k].push(cell(i, &schema.columns[k].0)?.to_string());
        }
    }
    let n = timestamps.len();
    let features = schema
        .columns
        .iter()
        .zip(raw)
        .map(|((name, kind), vals)| {
            let col = match kind {
                ColumnKind::Categorical => Column::Categorical(vals),
                ColumnKind::Numeric | ColumnKind::Passthrough => {
                    let nums = vals
                        .iter()
                        .enumerate()
                        .map(|(r, v)| parse_num(v, name, r))
                        .collect::<Result<Vec<_>>>()?;
                    if *kind == ColumnKind::Numeric {
                        Column::Numeric(nums)
                    } else {
                        Column::Passthrough(nums)
                    }
                }
            };
            Ok((name.clone(), col))
        })
        .collect::<Result<Vec<_>>>()?;
    let targets = DMatrix::from_row_slice(n, schema.targets.len(), &targets);
    Dataset::new(timestamps, features, schema.targets.clone(), targets)
}

fn parse_num(s: &str, column: &str, row: usize) -> Result<f64> {
    let v: f64 = s
        .parse()
        .map_err(|_| Error::Data(format!("column {column:?} row {row}: {s:?} is not a number")))?;
    if !v.is_finite() {
        return Err(Error::Data(format!("column {column:?} row {row}: non-finite value")));
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy(n: usize) -> Dataset {
        let t: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let x = Column::Numeric(t.iter().map(|v| v * 2.0).collect());
        let g = Column::Categorical((0..n).map(|i| format!("g{}", i % 3)).collect());
        let y = DMatrix::from_fn(n, 1, |i, _| i as f64);
        Dataset::new(t, vec![("x".into(), x), ("g".into(), g)], vec!["y".into()], y).unwrap()
    }

    #[test]
    fn rescaler_examples() {
        let r = Rescaler::fit(&[0.0, 10.0]);
        assert!(r.apply(5.0).abs() < 1e-15);
        assert!((r.apply(10.0) - PI).abs() < 1e-15);
        assert!((r.apply(0.0) + PI).abs() < 1e-15);
        let d = Rescaler::fit(&[3.0, 3.0]);
        assert_eq!(d.apply(3.0), 0.0);
    }

    proptest! {
        #[test]
        fn rescale_then_invert_is_identity(
            lo in -1e3f64..1e3, width in 1e-3f64..1e3, u in 0.0f64..=1.0
        ) {
            let r = Rescaler { min: lo, max: lo + width };
            let x = lo + u * width;
            let y = r.apply(x);
            prop_assert!((-PI - 1e-12..=PI + 1e-12).contains(&y));
            let back = r.invert(y);
            prop_assert!((back - x).abs() <= 1e-12 * x.abs().max(width).max(1.0));
        }
    }

    #[test]
    fn split_sizes_and_shared_scaling() {
        let ds = toy(10);
        let s = split(
            &ds,
            &SplitSpec { train: 0..6, validation: 6..8, test: 8..10 },
        )
        .unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (6, 2, 2));
        let a = s.train.scaling().unwrap();
        assert!(Arc::ptr_eq(a, s.validation.scaling().unwrap()));
        assert!(Arc::ptr_eq(a, s.test.scaling().unwrap()));
        // train statistics only: x ranges over 0..10 on train
        match &s.scaling.columns[0].1 {
            ColumnScaling::Numeric { rescaler } => assert_eq!(rescaler.max, 10.0),
            _ => panic!(),
        }
        // test values fall outside the torus and are accepted
        let r = s.test.rescaled().unwrap();
        assert!(r.features[(0, 0)] > PI);
        // timestamps cover the whole horizon
        assert!((s.scaling.time.apply(9.0) - PI).abs() < 1e-12);
    }

    #[test]
    fn split_rejects_overlap_and_out_of_range() {
        let ds = toy(10);
        let overlap = SplitSpec { train: 0..6, validation: 5..8, test: 8..10 };
        assert!(matches!(split(&ds, &overlap), Err(Error::Split(_))));
        let oob = SplitSpec { train: 0..6, validation: 6..8, test: 8..11 };
        assert!(matches!(split(&ds, &oob), Err(Error::Split(_))));
    }

    #[test]
    fn empty_validation_is_allowed() {
        let ds = toy(10);
        let s = split(&ds, &SplitSpec { train: 0..8, validation: 8..8, test: 8..10 }).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (8, 0, 2));
    }

    #[test]
    fn categorical_positions_follow_first_appearance() {
        let ds = toy(6);
        let s = split(&ds, &SplitSpec { train: 0..6, validation: 6..6, test: 6..6 }).unwrap();
        let r = s.train.rescaled().unwrap();
        assert!((r.features[(0, 1)] + PI).abs() < 1e-12);
        assert!(r.features[(1, 1)].abs() < 1e-12);
        assert!((r.features[(2, 1)] - PI).abs() < 1e-12);
        assert_eq!(category_index(r.features[(1, 1)], 3), Some(2));
        assert_eq!(category_index(0.3, 3), None);
    }

    #[test]
    fn unknown_category_is_rejected() {
        let train = toy(3);
        let scaling = Scaling::fit(&train, 10.0).unwrap();
        let other = Dataset::new(
            vec![0.0],
            vec![
                ("x".into(), Column::Numeric(vec![1.0])),
                ("g".into(), Column::Categorical(vec!["zzz".into()])),
            ],
            vec!["y".into()],
            DMatrix::zeros(1, 1),
        )
        .unwrap();
        assert!(matches!(
            other.rescale_with(&scaling),
            Err(Error::UnknownCategory { .. })
        ));
    }

    #[test]
    fn group_partition_examples() {
        let n = 96;
        let t: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let key = Column::Categorical((0..n).map(|i| format!("h{}", i % 48)).collect());
        let ds = Dataset::new(
            t,
            vec![("hh".into(), key)],
            vec!["y".into()],
            DMatrix::from_fn(n, 1, |i, _| i as f64),
        )
        .unwrap();
        let groups = group_partition(&ds, "hh").unwrap();
        assert_eq!(groups.len(), 48);
        assert!(groups.iter().all(|(_, g)| g.len() == 2));
        assert_eq!(groups[5].1.timestamps(), &[5.0, 53.0]);

        let single = toy(4);
        let mut one = single.clone();
        one.features[1].1 = Column::Categorical(vec!["a".into(); 4]);
        let g = group_partition(&one, "g").unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g[0].1.timestamps(), one.timestamps());

        assert!(matches!(group_partition(&single, "x"), Err(Error::Config(_))));
        assert!(matches!(group_partition(&single, "nope"), Err(Error::Config(_))));

        let mut holes = toy(4);
        holes.features[1].1 =
            Column::Categorical(vec!["a".into(), String::new(), "b".into(), "a".into()]);
        assert!(matches!(group_partition(&holes, "g"), Err(Error::Data(_))));
    }

    proptest! {
        #[test]
        fn group_partition_is_a_permutation(keys in proptest::collection::vec(0u8..5, 1..60)) {
            let n = keys.len();
            let ds = Dataset::new(
                (0..n).map(|i| i as f64).collect(),
                vec![("k".into(), Column::Categorical(keys.iter().map(|k| k.to_string()).collect()))],
                vec!["y".into()],
                DMatrix::from_fn(n, 1, |i, _| i as f64),
            ).unwrap();
            let groups = group_partition(&ds, "k").unwrap();
            let mut all: Vec<usize> = groups
                .iter()
                .flat_map(|(_, g)| g.target(0).into_iter().map(|v| v as usize).collect::<Vec<_>>())
                .collect();
            for (_, g) in &groups {
                prop_assert!(g.timestamps().windows(2).all(|w| w[0] <= w[1]));
            }
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn missing_values_rejected_at_construction() {
        let r = Dataset::new(
            vec![0.0, 1.0],
            vec![("x".into(), Column::Numeric(vec![1.0, f64::NAN]))],
            vec!["y".into()],
            DMatrix::zeros(2, 1),
        );
        assert!(matches!(r, Err(Error::Data(_))));
        let r = Dataset::new(
            vec![1.0, 0.0],
            vec![],
            vec!["y".into()],
            DMatrix::zeros(2, 1),
        );
        assert!(matches!(r, Err(Error::Data(_))));
    }

    #[test]
    fn csv_roundtrip_and_missing_cell() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        std::fs::write(&p, "t,y,x,g\n0,1.5,2,a\n1,2.5,3,b\n").unwrap();
        let schema = CsvSchema {
            timestamp: "t".into(),
            targets: vec!["y".into()],
            columns: vec![("x".into(), ColumnKind::Numeric), ("g".into(), ColumnKind::Categorical)],
        };
        let ds = read_csv(&p, &schema).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.target(0), vec![1.5, 2.5]);
        std::fs::write(&p, "t,y,x,g\n0,1.5,,a\n").unwrap();
        assert!(matches!(read_csv(&p, &schema), Err(Error::Data(_))));
    }

    #[test]
    fn concat_restores_original() {
        let ds = toy(7);
        let joined = ds.slice(0..3).concat(&ds.slice(3..7)).unwrap();
        assert_eq!(joined.timestamps(), ds.timestamps());
        assert_eq!(joined.targets(), ds.targets());
        assert_eq!(joined.features(), ds.features());
    }
}
