//! Independent oracles and random instance generators shared by the
//! integration suites.
#![allow(dead_code)]

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use weakl::constraints::{assemble_block_penalty, PenaltyBlock};
use weakl::data::category_position;
use weakl::features::{stack_effects, FeatureMapSpec};
use weakl::solver::{Design, WeaklProblem};
use weakl::{CMatrix, CVector, C64};

/// Writes complex `z` into the 2×2 real block acting on `[Re θ; Im θ]`.
fn put(big: &mut DMatrix<f64>, row: usize, col: usize, dim: usize, z: C64) {
    big[(2 * row, col)] = z.re;
    big[(2 * row, dim + col)] = -z.im;
    big[(2 * row + 1, col)] = z.im;
    big[(2 * row + 1, dim + col)] = z.re;
}

/// Minimizes `(1/n)Σ‖Λ(Φ_jθ − Y_j)‖² + ‖Mθ‖²` by an SVD least-squares
/// solve of the real form of `[ΛΦ/√n; M]θ ≈ [ΛY/√n; 0]`, built straight
/// from the problem fields.
pub fn dense_oracle(problem: &WeaklProblem) -> CVector {
    let n = problem.n();
    let sn = (n as f64).sqrt();
    let steps: Vec<CMatrix> = match &problem.design {
        Design::Stacked(m) => (0..n).map(|j| m.rows(j, 1).into_owned()).collect(),
        Design::PerStep(v) => v.clone(),
    };
    let dim = steps[0].ncols();
    let d_out = steps[0].nrows();
    let weight = match &problem.weight {
        None => CMatrix::identity(d_out, d_out),
        Some(w) if w.ncols() == d_out => w.clone(),
        Some(w) => w.clone(),
    };
    let r = weight.nrows();
    let pen = &problem.penalty.matrix;
    let rows = n * r + pen.nrows();
    let mut big = DMatrix::zeros(2 * rows, 2 * dim);
    let mut rhs = DVector::zeros(2 * rows);
    for (j, phi) in steps.iter().enumerate() {
        let a = &weight * phi;
        let y = CVector::from_iterator(d_out, problem.targets.row(j).iter().map(|&v| C64::new(v, 0.0)));
        let b = &weight * y;
        for i in 0..r {
            for k in 0..dim {
                put(&mut big, j * r + i, k, dim, a[(i, k)] / sn);
            }
            rhs[2 * (j * r + i)] = b[i].re / sn;
            rhs[2 * (j * r + i) + 1] = b[i].im / sn;
        }
    }
    for i in 0..pen.nrows() {
        for k in 0..dim {
            put(&mut big, n * r + i, k, dim, pen[(i, k)]);
        }
    }
    let sol = big.svd(true, true).solve(&rhs, 1e-15).expect("svd solve");
    CVector::from_fn(dim, |k, _| C64::new(sol[k], sol[dim + k]))
}

/// Random single-output problem mixing linear, Fourier and categorical
/// maps with `dim(θ) ≤ 6` and `n ≤ 40`; returns the features and specs.
pub struct Instance {
    pub problem: WeaklProblem,
    pub features: DMatrix<f64>,
    pub maps: Vec<FeatureMapSpec>,
    pub blocks: Vec<PenaltyBlock>,
}

pub fn random_maps(rng: &mut ChaCha8Rng) -> Vec<FeatureMapSpec> {
    loop {
        let count = rng.random_range(1..=3);
        let maps: Vec<FeatureMapSpec> = (0..count)
            .map(|j| match rng.random_range(0..3) {
                0 => FeatureMapSpec::linear(j),
                1 => FeatureMapSpec::fourier(j, rng.random_range(0..=2)),
                _ => FeatureMapSpec::categorical(j, rng.random_range(2..=4)),
            })
            .collect();
        let dim: usize = maps.iter().map(FeatureMapSpec::dim).sum();
        if dim <= 6 && maps.iter().any(|m| !matches!(m, FeatureMapSpec::Linear { .. })) {
            return maps;
        }
    }
}

pub fn random_features(rng: &mut ChaCha8Rng, maps: &[FeatureMapSpec], n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, maps.len(), |_, j| match &maps[j] {
        FeatureMapSpec::Categorical { cardinality, .. } => {
            category_position(rng.random_range(1..=*cardinality), *cardinality)
        }
        _ => rng.random_range(-PI..PI),
    })
}

pub fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let maps = random_maps(rng);
    let n = rng.random_range(8..=40);
    let features = random_features(rng, &maps, n);
    let y: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
    let blocks: Vec<PenaltyBlock> = maps
        .iter()
        .enumerate()
        .map(|(j, m)| PenaltyBlock::for_map(format!("e{j}"), 10f64.powf(rng.random_range(-3.0..1.0)), m))
        .collect();
    let dim = maps.iter().map(FeatureMapSpec::dim).sum();
    let penalty = assemble_block_penalty(&blocks, dim).unwrap();
    let design = stack_effects(&maps, &features).unwrap();
    Instance {
        problem: WeaklProblem::stacked(design, &y, penalty),
        features,
        maps,
        blocks,
    }
}

/// Coefficients whose additive function is real: within each Fourier or
/// categorical block `θ_{−k} = conj(θ_k)`.
pub fn conjugate_symmetric(rng: &mut ChaCha8Rng, maps: &[FeatureMapSpec]) -> CVector {
    let mut out = Vec::new();
    for m in maps {
        match m {
            FeatureMapSpec::Linear { .. } => out.push(C64::new(rng.random_range(-2.0..2.0), 0.0)),
            _ => {
                let d = m.dim();
                let half = d / 2;
                let pos: Vec<C64> = (0..half)
                    .map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                    .collect();
                // Frequencies run −m..m; the block is univariate here.
                for k in (0..half).rev() {
                    out.push(pos[k].conj());
                }
                out.push(C64::new(rng.random_range(-1.0..1.0), 0.0));
                out.extend(pos.iter().copied());
            }
        }
    }
    CVector::from_vec(out)
}

pub fn random_complex(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> CMatrix {
    CMatrix::from_fn(rows, cols, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
}

pub fn spectral_norm(m: &CMatrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.max()
}

pub fn rel_diff(a: &CVector, b: &CVector) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}
