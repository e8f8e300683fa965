//! Penalty matrices, subspace projectors and constraint reparameterizations.

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{fourier_frequencies, FeatureMapSpec};
use crate::{c, CMatrix, CVector};

/// Largest condition number of `P*P` accepted when building projectors.
pub const PROJECTOR_CONDITION_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PenaltyKind {
    /// `√λ · I_dim`.
    Ridge { dim: usize },
    /// Diagonal with entry `√(λ(1 + ‖k‖₂^{2s}))` over the Fourier grid of
    /// `inputs` axes truncated at `m`.
    Sobolev { m: usize, s: u32, inputs: usize },
    /// `√λ · matrix`, user supplied; rows may differ from columns.
    Custom { matrix: DMatrix<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyBlock {
    pub label: String,
    pub lambda: f64,
    pub kind: PenaltyKind,
}

impl PenaltyBlock {
    pub fn ridge(label: impl Into<String>, lambda: f64, dim: usize) -> Self {
        PenaltyBlock {
            label: label.into(),
            lambda,
            kind: PenaltyKind::Ridge { dim },
        }
    }

    pub fn sobolev(label: impl Into<String>, lambda: f64, m: usize, s: u32) -> Self {
        PenaltyBlock {
            label: label.into(),
            lambda,
            kind: PenaltyKind::Sobolev { m, s, inputs: 1 },
        }
    }

    /// The regularizer conventionally paired with a map: ridge for linear
    /// and categorical effects, Sobolev for Fourier effects.
    pub fn for_map(label: impl Into<String>, lambda: f64, spec: &FeatureMapSpec) -> Self {
        let kind = match spec {
            FeatureMapSpec::Fourier { inputs, m, s } => PenaltyKind::Sobolev {
                m: *m,
                s: *s,
                inputs: inputs.len(),
            },
            other => PenaltyKind::Ridge { dim: other.dim() },
        };
        PenaltyBlock {
            label: label.into(),
            lambda,
            kind,
        }
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            PenaltyKind::Ridge { dim } => *dim,
            PenaltyKind::Sobolev { m, inputs, .. } => (2 * m + 1).pow(*inputs as u32),
            PenaltyKind::Custom { matrix } => matrix.ncols(),
        }
    }

    /// Realized block matrix (already scaled by `√λ`).
    pub fn realize(&self) -> Result<DMatrix<f64>> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!(
                "penalty {:?} has invalid weight {}",
                self.label, self.lambda
            )));
        }
        Ok(match &self.kind {
            PenaltyKind::Ridge { dim } => DMatrix::identity(*dim, *dim) * self.lambda.sqrt(),
            PenaltyKind::Sobolev { m, s, inputs } => {
                if *s < 1 {
                    return Err(Error::Config("sobolev order must be at least 1".into()));
                }
                let diag: Vec<f64> = fourier_frequencies(*m, *inputs)
                    .iter()
                    .map(|k| {
                        let norm2: f64 = k.iter().map(|&v| (v * v) as f64).sum();
                        (self.lambda * (1.0 + norm2.powi(*s as i32))).sqrt()
                    })
                    .collect();
                DMatrix::from_diagonal(&nalgebra::DVector::from_vec(diag))
            }
            PenaltyKind::Custom { matrix } => matrix * self.lambda.sqrt(),
        })
    }
}

/// Univariate Sobolev diagonal `diag(√(λ(1 + k^{2s})))_{-m ≤ k ≤ m}`.
pub fn sobolev_diagonal(m: usize, s: u32, lambda: f64) -> DMatrix<f64> {
    PenaltyBlock::sobolev("sobolev", lambda, m, s)
        .realize()
        .expect("valid sobolev block")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockInfo {
    pub label: String,
    pub offset: usize,
    pub dim: usize,
    pub lambda: f64,
}

/// The penalty matrix `M` with bookkeeping about the blocks it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyMatrix {
    pub matrix: CMatrix,
    pub blocks: Vec<BlockInfo>,
    injective: bool,
}

impl PenaltyMatrix {
    /// `M = 0`.
    pub fn zero(dim: usize) -> Self {
        PenaltyMatrix {
            matrix: CMatrix::zeros(0, dim),
            blocks: vec![BlockInfo {
                label: "all".into(),
                offset: 0,
                dim,
                lambda: 0.0,
            }],
            injective: dim == 0,
        }
    }

    /// Wraps an arbitrary matrix; injectivity is checked numerically.
    pub fn from_matrix(matrix: CMatrix) -> Self {
        let dim = matrix.ncols();
        let injective = has_full_column_rank(&matrix);
        PenaltyMatrix {
            matrix,
            blocks: vec![BlockInfo {
                label: "custom".into(),
                offset: 0,
                dim,
                lambda: 1.0,
            }],
            injective,
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    /// Whether `M` is injective, the condition that makes the Gram matrix
    /// invertible regardless of the data.
    pub fn is_injective(&self) -> bool {
        self.injective
    }

    pub fn zero_blocks(&self) -> Vec<String> {
        self.blocks
            .iter()
            .filter(|b| b.lambda == 0.0)
            .map(|b| b.label.clone())
            .collect()
    }

    /// `M*M`.
    pub fn gram(&self) -> CMatrix {
        self.matrix.adjoint() * &self.matrix
    }

    /// Stacks `√λ_c · C` above `M`, i.e. adds `λ_c ‖Cθ‖²` to the risk.
    pub fn augment(&self, label: impl Into<String>, constraint: &CMatrix, lambda: f64) -> Result<Self> {
        if constraint.ncols() != self.dim() {
            return Err(Error::shape(
                format!("{} constraint columns", self.dim()),
                constraint.ncols(),
            ));
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::Config(format!("constraint weight {lambda} is invalid")));
        }
        let rows = constraint.nrows() + self.matrix.nrows();
        let mut matrix = CMatrix::zeros(rows, self.dim());
        matrix
            .rows_mut(0, constraint.nrows())
            .copy_from(&(constraint * c(lambda.sqrt())));
        matrix
            .rows_mut(constraint.nrows(), self.matrix.nrows())
            .copy_from(&self.matrix);
        let mut blocks = self.blocks.clone();
        blocks.push(BlockInfo {
            label: label.into(),
            offset: 0,
            dim: self.dim(),
            lambda,
        });
        Ok(PenaltyMatrix {
            matrix,
            blocks,
            injective: self.injective || (lambda > 0.0 && has_full_column_rank(constraint)),
        })
    }
}

/// Block-diagonal `M = diag(√λ_1 M_1, …, √λ_p M_p)` whose blocks must cover
/// exactly `dim` coefficients.
pub fn assemble_block_penalty(blocks: &[PenaltyBlock], dim: usize) -> Result<PenaltyMatrix> {
    let total: usize = blocks.iter().map(PenaltyBlock::dim).sum();
    if total != dim {
        return Err(Error::shape(format!("blocks covering {dim} coefficients"), total));
    }
    let realized = blocks
        .iter()
        .map(PenaltyBlock::realize)
        .collect::<Result<Vec<_>>>()?;
    let rows: usize = realized.iter().map(|m| m.nrows()).sum();
    let mut matrix = CMatrix::zeros(rows, dim);
    let mut info = Vec::with_capacity(blocks.len());
    let (mut r, mut col) = (0, 0);
    let mut injective = true;
    for (b, m) in blocks.iter().zip(&realized) {
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                matrix[(r + i, col + j)] = c(m[(i, j)]);
            }
        }
        injective &= b.lambda > 0.0
            && match &b.kind {
                PenaltyKind::Custom { matrix } => has_full_column_rank(&crate::complexify(matrix)),
                _ => true,
            };
        info.push(BlockInfo {
            label: b.label.clone(),
            offset: col,
            dim: m.ncols(),
            lambda: b.lambda,
        });
        r += m.nrows();
        col += m.ncols();
    }
    Ok(PenaltyMatrix {
        matrix,
        blocks: info,
        injective,
    })
}

fn has_full_column_rank(m: &CMatrix) -> bool {
    if m.ncols() == 0 {
        return true;
    }
    if m.nrows() < m.ncols() {
        return false;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    max > 0.0 && min > max * 1e-12
}

/// Condition number of the Hermitian positive semidefinite `g`
/// (infinite when singular).
pub(crate) fn hermitian_condition(g: &CMatrix) -> f64 {
    if g.nrows() == 0 {
        return 1.0;
    }
    let eig = SymmetricEigen::new(g.clone()).eigenvalues;
    let max = eig.max();
    let min = eig.min();
    if min <= 0.0 || max <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// `C = I − P(P*P)⁻¹P*`, the orthogonal projector onto `Im(P)^⊥`.
pub fn orthogonal_complement_projector(p: &CMatrix) -> Result<CMatrix> {
    let (rows, cols) = p.shape();
    if cols > rows {
        return Err(Error::RankDeficient { condition: f64::INFINITY });
    }
    let ptp = p.adjoint() * p;
    let condition = hermitian_condition(&ptp);
    if !(condition <= PROJECTOR_CONDITION_LIMIT) {
        return Err(Error::RankDeficient { condition });
    }
    let chol = Cholesky::new(ptp).ok_or(Error::RankDeficient { condition })?;
    let coef = chol.solve(&p.adjoint());
    Ok(CMatrix::identity(rows, rows) - p * coef)
}

/// Distance from `theta` to `Im(P)` given its complement projector.
pub fn distance_to_subspace(projector: &CMatrix, theta: &CVector) -> f64 {
    (projector * theta).norm()
}

/// Restricts `θ ∈ Im(P)` by substituting `Φ_t P` for `Φ_t`.
pub fn exact_constraint_reparam(phi: &CMatrix, p: &CMatrix) -> Result<CMatrix> {
    if phi.ncols() != p.nrows() {
        return Err(Error::shape(format!("P with {} rows", phi.ncols()), p.nrows()));
    }
    check_injective(p)?;
    Ok(phi * p)
}

/// Maps reduced coefficients back: `θ = Pθ'`.
pub fn lift(p: &CMatrix, reduced: &CVector) -> CVector {
    p * reduced
}

fn check_injective(p: &CMatrix) -> Result<()> {
    let condition = hermitian_condition(&(p.adjoint() * p));
    if p.ncols() > p.nrows() || !(condition <= PROJECTOR_CONDITION_LIMIT) {
        return Err(Error::RankDeficient { condition });
    }
    Ok(())
}

/// Rows `(I − P_J)Π_J` of the transfer constraint between the blocks at
/// `offsets` (each of size `block_dim`) with weights `alpha`; `P_J`
/// projects onto `Im(M_J)`, `M_J = (α_1 I, …, α_|J| I)ᵀ`.
pub fn transfer_constraint_rows(
    offsets: &[usize],
    block_dim: usize,
    alpha: &[f64],
    dim: usize,
) -> Result<CMatrix> {
    if offsets.len() < 2 {
        return Err(Error::Config("transfer set needs at least two nodes".into()));
    }
    if alpha.len() != offsets.len() {
        return Err(Error::shape(format!("{} transfer weights", offsets.len()), alpha.len()));
    }
    if alpha.iter().any(|&a| a == 0.0 || !a.is_finite()) {
        return Err(Error::Config("transfer weights must be nonzero and finite".into()));
    }
    for &o in offsets {
        if o + block_dim > dim {
            return Err(Error::shape(format!("block inside {dim} coefficients"), o + block_dim));
        }
    }
    let j = offsets.len();
    let mut mj = CMatrix::zeros(block_dim * j, block_dim);
    for (i, &a) in alpha.iter().enumerate() {
        for d in 0..block_dim {
            mj[(i * block_dim + d, d)] = c(a);
        }
    }
    let complement = orthogonal_complement_projector(&mj)?;
    let mut select = CMatrix::zeros(block_dim * j, dim);
    for (i, &o) in offsets.iter().enumerate() {
        for d in 0..block_dim {
            select[(i * block_dim + d, o + d)] = c(1.0);
        }
    }
    Ok(complement * select)
}

/// `Π_J*(I − P_J)Π_J`.
pub fn transfer_penalty(
    offsets: &[usize],
    block_dim: usize,
    alpha: &[f64],
    dim: usize,
) -> Result<CMatrix> {
    let rows = transfer_constraint_rows(offsets, block_dim, alpha, dim)?;
    Ok(rows.adjoint() * rows)
}
