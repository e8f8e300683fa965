//! Hierarchical forecasting: summation matrices, the coherent WeaKL
//! estimators, projection reconciliation baselines and the two-leaf toy
//! benchmark.

mod estimators;
mod reconcile;
mod toy;

pub use estimators::{
    fit_weakl_bu, fit_weakl_g, fit_weakl_t, HierEstimator, HierFit, NodeInputs, TransferSpec,
};
pub use reconcile::{
    mint_projection, ols_projection, reconcile, residual_covariance, shrink_toward_diagonal,
    ReconcileMethod, DEFAULT_MINT_SHRINKAGE,
};
pub use toy::{
    gen_toy_hierarchy, run_toy_benchmark, toy_hierarchy, ToyBenchmark, ToyConfig, ToyData, ToyMethod,
    ToyRow,
};

use std::collections::HashMap;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One row of a hierarchy definition: a node, its parent (none for a
/// root) and the name of its level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub node: String,
    #[serde(default)]
    pub parent: Option<String>,
    pub level: String,
}

impl NodeRecord {
    pub fn new(node: &str, parent: Option<&str>, level: &str) -> Self {
        NodeRecord {
            node: node.into(),
            parent: parent.map(Into::into),
            level: level.into(),
        }
    }
}

/// A forest of aggregates over bottom nodes, stored bottom-first: the
/// `ℓ2` leaves in definition order, then aggregates from deepest to
/// shallowest.
#[derive(Debug, Clone, PartialEq)]
pub struct Hierarchy {
    labels: Vec<String>,
    levels: Vec<String>,
    parents: Vec<Option<usize>>,
    n_bottom: usize,
    summation: DMatrix<f64>,
}

impl Hierarchy {
    pub fn from_records(records: &[NodeRecord]) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Config("hierarchy has no nodes".into()));
        }
        let mut index = HashMap::new();
        for (i, r) in records.iter().enumerate() {
            if r.node.is_empty() {
                return Err(Error::Data(format!("hierarchy row {} has an empty node id", i + 1)));
            }
            if index.insert(r.node.as_str(), i).is_some() {
                return Err(Error::Data(format!("node {:?} is defined twice", r.node)));
            }
        }
        let parent: Vec<Option<usize>> = records
            .iter()
            .map(|r| match r.parent.as_deref() {
                None | Some("") => Ok(None),
                Some(p) => index.get(p).copied().map(Some).ok_or_else(|| {
                    Error::Data(format!("node {:?} names undefined parent {p:?}", r.node))
                }),
            })
            .collect::<Result<_>>()?;

        let n = records.len();
        let mut depth = vec![0usize; n];
        for start in 0..n {
            let mut steps = 0;
            let mut cur = start;
            while let Some(p) = parent[cur] {
                steps += 1;
                if steps > n {
                    return Err(Error::Data(format!(
                        "node {:?} sits on a parent cycle",
                        records[start].node
                    )));
                }
                cur = p;
            }
            depth[start] = steps;
        }

        let mut has_child = vec![false; n];
        for p in parent.iter().flatten() {
            has_child[*p] = true;
        }
        let leaves: Vec<usize> = (0..n).filter(|&i| !has_child[i]).collect();
        let mut aggregates: Vec<usize> = (0..n).filter(|&i| has_child[i]).collect();
        aggregates.sort_by(|a, b| depth[*b].cmp(&depth[*a]));
        let order: Vec<usize> = leaves.iter().chain(&aggregates).copied().collect();
        let mut position = vec![0; n];
        for (pos, &i) in order.iter().enumerate() {
            position[i] = pos;
        }

        let n_bottom = leaves.len();
        let mut summation = DMatrix::zeros(n, n_bottom);
        for (col, &leaf) in leaves.iter().enumerate() {
            let mut cur = Some(leaf);
            while let Some(i) = cur {
                summation[(position[i], col)] = 1.0;
                cur = parent[i];
            }
        }
        Ok(Hierarchy {
            labels: order.iter().map(|&i| records[i].node.clone()).collect(),
            levels: order.iter().map(|&i| records[i].level.clone()).collect(),
            parents: order.iter().map(|&i| parent[i].map(|p| position[p])).collect(),
            n_bottom,
            summation,
        })
    }

    /// Reads `node,parent,level` rows; an empty parent marks a root.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path.as_ref())?;
        let records = reader
            .deserialize::<NodeRecord>()
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Self::from_records(&records)
    }

    /// A lone bottom node.
    pub fn flat(label: &str) -> Self {
        Self::from_records(&[NodeRecord::new(label, None, "bottom")]).expect("single node")
    }

    pub fn n_nodes(&self) -> usize {
        self.labels.len()
    }

    pub fn n_bottom(&self) -> usize {
        self.n_bottom
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn node_levels(&self) -> &[String] {
        &self.levels
    }

    pub fn parent(&self, node: usize) -> Option<usize> {
        self.parents[node]
    }

    pub fn summation(&self) -> &DMatrix<f64> {
        &self.summation
    }

    /// Definition rows in node order; rebuilding from them gives an equal
    /// hierarchy.
    pub fn records(&self) -> Vec<NodeRecord> {
        (0..self.n_nodes())
            .map(|i| NodeRecord {
                node: self.labels[i].clone(),
                parent: self.parents[i].map(|p| self.labels[p].clone()),
                level: self.levels[i].clone(),
            })
            .collect()
    }

    pub fn node_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Distinct level names in node order (bottom level first).
    pub fn level_names(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for l in &self.levels {
            if !out.contains(l) {
                out.push(l.clone());
            }
        }
        out
    }

    /// Expands one value per level into a per-node diagonal.
    pub fn broadcast_levels(&self, values: &[(String, f64)]) -> Result<Vec<f64>> {
        let names = self.level_names();
        for (name, _) in values {
            if !names.contains(name) {
                return Err(Error::Config(format!("unknown hierarchy level {name:?}")));
            }
        }
        self.levels
            .iter()
            .map(|l| {
                values
                    .iter()
                    .find(|(name, _)| name == l)
                    .map(|(_, v)| *v)
                    .ok_or_else(|| Error::Config(format!("no value given for level {l:?}")))
            })
            .collect()
    }

    /// `‖y − S·y_b‖∞` for one node vector.
    pub fn coherence_residual(&self, y: &[f64]) -> f64 {
        let bottom = nalgebra::DVector::from_column_slice(&y[..self.n_bottom]);
        let full = &self.summation * bottom;
        y.iter().zip(full.iter()).fold(0.0, |a, (u, v)| a.max((u - v).abs()))
    }
}

/// Mean squared error per node, per level, and over all levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelErrors {
    pub nodes: Vec<f64>,
    pub levels: Vec<(String, f64)>,
    pub all: f64,
}

/// Level errors sum the node MSEs in that level; the total sums levels.
pub fn level_errors(hierarchy: &Hierarchy, predicted: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<LevelErrors> {
    if predicted.shape() != truth.shape() {
        return Err(Error::shape(
            format!("{}×{}", truth.nrows(), truth.ncols()),
            format!("{}×{}", predicted.nrows(), predicted.ncols()),
        ));
    }
    if predicted.ncols() != hierarchy.n_nodes() {
        return Err(Error::shape(format!("{} node columns", hierarchy.n_nodes()), predicted.ncols()));
    }
    if predicted.nrows() == 0 {
        return Err(Error::Data("no rows to score".into()));
    }
    let n = predicted.nrows() as f64;
    let nodes: Vec<f64> = (0..predicted.ncols())
        .map(|j| {
            predicted
                .column(j)
                .iter()
                .zip(truth.column(j).iter())
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                / n
        })
        .collect();
    let levels: Vec<(String, f64)> = hierarchy
        .level_names()
        .into_iter()
        .map(|name| {
            let total = hierarchy
                .node_levels()
                .iter()
                .zip(&nodes)
                .filter(|(l, _)| **l == name)
                .map(|(_, v)| v)
                .sum();
            (name, total)
        })
        .collect();
    let all = levels.iter().map(|(_, v)| v).sum();
    Ok(LevelErrors { nodes, levels, all })
}
