use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::Hierarchy;
use crate::constraints::{assemble_block_penalty, transfer_constraint_rows, PenaltyBlock, PenaltyMatrix};
use crate::error::{Error, Result};
use crate::features::{stack_effects, FeatureMapSpec};
use crate::shape::Effect;
use crate::solver::{fit_weakl, Design, FitDiagnostics, WeaklProblem};
use crate::{c, complexify, CMatrix, CVector};

/// Features and additive effects of one modeled node.
#[derive(Debug, Clone)]
pub struct NodeInputs {
    /// `n × d_ℓ` rescaled features local to the node.
    pub features: DMatrix<f64>,
    pub effects: Vec<Effect>,
}

/// Bottom nodes whose coefficient blocks are pulled toward a shared,
/// weighted value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferSpec {
    /// Indices of bottom nodes.
    pub nodes: Vec<usize>,
    pub alpha: Vec<f64>,
    pub lambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HierEstimator {
    Bu,
    G,
    T,
}

/// Coefficients of a hierarchical estimator, one block per modeled node
/// (bottom nodes for BU and T, every node for G).
#[derive(Debug, Clone)]
pub struct HierFit {
    pub estimator: HierEstimator,
    pub node_effects: Vec<Vec<Effect>>,
    pub offsets: Vec<usize>,
    pub theta: CVector,
    pub diagnostics: FitDiagnostics,
}

struct Layout {
    maps: Vec<Vec<FeatureMapSpec>>,
    offsets: Vec<usize>,
    dims: Vec<usize>,
    dim: usize,
}

fn layout(nodes: &[NodeInputs]) -> Result<Layout> {
    let mut maps = Vec::new();
    let mut offsets = Vec::new();
    let mut dims = Vec::new();
    let mut off = 0;
    for (i, node) in nodes.iter().enumerate() {
        if node.effects.is_empty() {
            return Err(Error::Config(format!("node {i} has no effects")));
        }
        let m: Vec<FeatureMapSpec> = node.effects.iter().map(|e| e.map.clone()).collect();
        let d: usize = m.iter().map(FeatureMapSpec::dim).sum();
        offsets.push(off);
        dims.push(d);
        off += d;
        maps.push(m);
    }
    Ok(Layout {
        maps,
        offsets,
        dims,
        dim: off,
    })
}

fn penalty(nodes: &[NodeInputs], labels: &[String], dim: usize) -> Result<PenaltyMatrix> {
    let blocks: Vec<PenaltyBlock> = nodes
        .iter()
        .zip(labels)
        .flat_map(|(node, label)| {
            node.effects
                .iter()
                .map(move |e| PenaltyBlock::for_map(format!("{label}/{}", e.name), e.lambda, &e.map))
        })
        .collect();
    assemble_block_penalty(&blocks, dim)
}

/// Per-node feature rows: `node_rows[ℓ]` is `n × D_ℓ` (conjugated maps).
fn node_rows(nodes: &[NodeInputs], layout: &Layout, n: usize) -> Result<Vec<CMatrix>> {
    nodes
        .iter()
        .zip(&layout.maps)
        .map(|(node, maps)| {
            if node.features.nrows() != n {
                return Err(Error::shape(format!("{n} feature rows"), node.features.nrows()));
            }
            stack_effects(maps, &node.features)
        })
        .collect()
}

/// Block-diagonal `Φ_t` (modeled nodes × dim).
fn step_matrix(rows: &[CMatrix], layout: &Layout, t: usize) -> CMatrix {
    let mut phi = CMatrix::zeros(rows.len(), layout.dim);
    for (l, r) in rows.iter().enumerate() {
        phi.view_mut((l, layout.offsets[l]), (1, layout.dims[l]))
            .copy_from(&r.row(t));
    }
    phi
}

fn check_targets(hierarchy: &Hierarchy, targets: &DMatrix<f64>) -> Result<()> {
    if targets.ncols() != hierarchy.n_nodes() {
        return Err(Error::shape(format!("{} target columns", hierarchy.n_nodes()), targets.ncols()));
    }
    if targets.nrows() == 0 {
        return Err(Error::Data("no training rows".into()));
    }
    Ok(())
}

fn check_diag(values: &[f64], len: usize, what: &str) -> Result<()> {
    if values.len() != len {
        return Err(Error::shape(format!("{len} {what} entries"), values.len()));
    }
    if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::Config(format!("{what} entries must be finite and non-negative")));
    }
    Ok(())
}

fn diag(values: &[f64]) -> CMatrix {
    CMatrix::from_diagonal(&CVector::from_iterator(values.len(), values.iter().map(|&v| c(v))))
}

fn bu_problem(
    hierarchy: &Hierarchy,
    bottom: &[NodeInputs],
    targets: &DMatrix<f64>,
    weights: &[f64],
) -> Result<(WeaklProblem, Layout)> {
    check_targets(hierarchy, targets)?;
    if bottom.len() != hierarchy.n_bottom() {
        return Err(Error::shape(format!("{} bottom nodes", hierarchy.n_bottom()), bottom.len()));
    }
    check_diag(weights, hierarchy.n_nodes(), "node weight")?;
    let layout = layout(bottom)?;
    let n = targets.nrows();
    let rows = node_rows(bottom, &layout, n)?;
    let s = complexify(hierarchy.summation());
    let steps = (0..n).map(|t| &s * step_matrix(&rows, &layout, t)).collect();
    let penalty = penalty(bottom, &hierarchy.labels()[..hierarchy.n_bottom()], layout.dim)?;
    let problem = WeaklProblem {
        design: Design::PerStep(steps),
        targets: targets.clone(),
        weight: Some(diag(weights)),
        penalty,
    };
    Ok((problem, layout))
}

fn finish(estimator: HierEstimator, nodes: &[NodeInputs], layout: Layout, problem: &WeaklProblem) -> Result<HierFit> {
    let solution = fit_weakl(problem)?;
    Ok(HierFit {
        estimator,
        node_effects: nodes.iter().map(|n| n.effects.clone()).collect(),
        offsets: layout.offsets,
        theta: solution.theta,
        diagnostics: solution.diagnostics,
    })
}

/// Bottom-node models fitted through the summation matrix with node
/// weights `Λ = diag(weights)`.
pub fn fit_weakl_bu(
    hierarchy: &Hierarchy,
    bottom: &[NodeInputs],
    targets: &DMatrix<f64>,
    weights: &[f64],
) -> Result<HierFit> {
    let (problem, layout) = bu_problem(hierarchy, bottom, targets, weights)?;
    finish(HierEstimator::Bu, bottom, layout, &problem)
}

/// Bottom-up fit plus a transfer penalty across the blocks of `transfer`.
pub fn fit_weakl_t(
    hierarchy: &Hierarchy,
    bottom: &[NodeInputs],
    targets: &DMatrix<f64>,
    weights: &[f64],
    transfer: &TransferSpec,
) -> Result<HierFit> {
    let (mut problem, layout) = bu_problem(hierarchy, bottom, targets, weights)?;
    if transfer.nodes.len() < 2 {
        return Err(Error::Config("transfer set needs at least two nodes".into()));
    }
    if let Some(&bad) = transfer.nodes.iter().find(|&&j| j >= hierarchy.n_bottom()) {
        return Err(Error::Config(format!("transfer node {bad} is not a bottom node")));
    }
    let block = layout.dims[transfer.nodes[0]];
    if transfer.nodes.iter().any(|&j| layout.dims[j] != block) {
        return Err(Error::Config("transfer nodes must share one coefficient dimension".into()));
    }
    if !(transfer.lambda >= 0.0) || !transfer.lambda.is_finite() {
        return Err(Error::Config(format!("transfer strength {} is invalid", transfer.lambda)));
    }
    let offsets: Vec<usize> = transfer.nodes.iter().map(|&j| layout.offsets[j]).collect();
    let rows = transfer_constraint_rows(&offsets, block, &transfer.alpha, layout.dim)?;
    problem.penalty = problem.penalty.augment("transfer", &rows, transfer.lambda)?;
    finish(HierEstimator::T, bottom, layout, &problem)
}

/// Every node modeled, with the coherence penalty
/// `‖Γ(SΠ_b − I)Φ_tθ‖²` added to the data term.
pub fn fit_weakl_g(
    hierarchy: &Hierarchy,
    nodes: &[NodeInputs],
    targets: &DMatrix<f64>,
    gamma: &[f64],
) -> Result<HierFit> {
    check_targets(hierarchy, targets)?;
    let l1 = hierarchy.n_nodes();
    if nodes.len() != l1 {
        return Err(Error::shape(format!("{l1} nodes"), nodes.len()));
    }
    check_diag(gamma, l1, "coherence weight")?;
    let layout = layout(nodes)?;
    let n = targets.nrows();
    let rows = node_rows(nodes, &layout, n)?;
    let mut select = DMatrix::zeros(hierarchy.n_bottom(), l1);
    for j in 0..hierarchy.n_bottom() {
        select[(j, j)] = 1.0;
    }
    let incoherence = complexify(&(hierarchy.summation() * select - DMatrix::identity(l1, l1)));
    let coherence = diag(gamma) * incoherence;
    let steps = (0..n)
        .map(|t| {
            let phi = step_matrix(&rows, &layout, t);
            let mut step = CMatrix::zeros(2 * l1, layout.dim);
            step.rows_mut(0, l1).copy_from(&phi);
            step.rows_mut(l1, l1).copy_from(&(&coherence * &phi));
            step
        })
        .collect();
    let mut stacked = DMatrix::zeros(n, 2 * l1);
    stacked.columns_mut(0, l1).copy_from(targets);
    let problem = WeaklProblem {
        design: Design::PerStep(steps),
        targets: stacked,
        weight: None,
        penalty: penalty(nodes, hierarchy.labels(), layout.dim)?,
    };
    finish(HierEstimator::G, nodes, layout, &problem)
}

impl HierFit {
    /// Node forecasts `n × ℓ1`: `SΦ_tθ̂` for BU and T, `Φ_tθ̂` for G.
    pub fn predict(&self, hierarchy: &Hierarchy, features: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
        let modeled = self.node_effects.len();
        if features.len() != modeled {
            return Err(Error::shape(format!("{modeled} node feature matrices"), features.len()));
        }
        let n = features.first().map_or(0, |f| f.nrows());
        let mut node_values = DMatrix::zeros(n, modeled);
        for (l, (effects, x)) in self.node_effects.iter().zip(features).enumerate() {
            if x.nrows() != n {
                return Err(Error::shape(format!("{n} feature rows"), x.nrows()));
            }
            let maps: Vec<FeatureMapSpec> = effects.iter().map(|e| e.map.clone()).collect();
            let rows = stack_effects(&maps, x)?;
            let block = self.theta.rows(self.offsets[l], rows.ncols());
            let values = rows * block;
            for t in 0..n {
                node_values[(t, l)] = values[t].re;
            }
        }
        Ok(match self.estimator {
            HierEstimator::G => node_values,
            HierEstimator::Bu | HierEstimator::T => node_values * hierarchy.summation().transpose(),
        })
    }

    /// Coefficient block of modeled node `l`.
    pub fn node_theta(&self, l: usize) -> CVector {
        let end = self.offsets.get(l + 1).copied().unwrap_or(self.theta.len());
        self.theta.rows(self.offsets[l], end - self.offsets[l]).into_owned()
    }
}
