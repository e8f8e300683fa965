//! Feature maps φ and the block-diagonal feature matrices built from them.
//!
//! A model component is the inner product `⟨φ(x), θ⟩ = φ(x)* θ`, so feature
//! matrices store conjugated map values. Fourier frequencies are enumerated
//! in odometer order: every axis runs from `-m` to `m`, the first input axis
//! varies slowest.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::category_index;
use crate::error::{Error, Result};
use crate::{CMatrix, C64};

pub const DEFAULT_SOBOLEV_ORDER: u32 = 2;

fn default_s() -> u32 {
    DEFAULT_SOBOLEV_ORDER
}

/// Description of one effect map. Input ids index feature columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FeatureMapSpec {
    /// `φ(x) = x`.
    Linear { input: usize },
    /// `φ(x) = (exp(i⟨x, k⟩/2))_{‖k‖∞ ≤ m}` over one or several inputs.
    Fourier {
        inputs: Vec<usize>,
        m: usize,
        #[serde(default = "default_s")]
        s: u32,
    },
    /// Fourier map with `m = ⌊|E|/2⌋` applied to the torus position of the
    /// category index.
    Categorical { input: usize, cardinality: usize },
}

impl FeatureMapSpec {
    pub fn linear(input: usize) -> Self {
        FeatureMapSpec::Linear { input }
    }

    pub fn fourier(input: usize, m: usize) -> Self {
        FeatureMapSpec::Fourier {
            inputs: vec![input],
            m,
            s: DEFAULT_SOBOLEV_ORDER,
        }
    }

    pub fn categorical(input: usize, cardinality: usize) -> Self {
        FeatureMapSpec::Categorical { input, cardinality }
    }

    pub fn dim(&self) -> usize {
        match self {
            FeatureMapSpec::Linear { .. } => 1,
            FeatureMapSpec::Fourier { inputs, m, .. } => (2 * m + 1).pow(inputs.len() as u32),
            FeatureMapSpec::Categorical { cardinality, .. } => 2 * (cardinality / 2) + 1,
        }
    }

    pub fn inputs(&self) -> Vec<usize> {
        match self {
            FeatureMapSpec::Linear { input } | FeatureMapSpec::Categorical { input, .. } => {
                vec![*input]
            }
            FeatureMapSpec::Fourier { inputs, .. } => inputs.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            FeatureMapSpec::Linear { .. } => Ok(()),
            FeatureMapSpec::Fourier { inputs, s, .. } => {
                if inputs.is_empty() {
                    return Err(Error::Config("fourier map needs at least one input".into()));
                }
                if *s < 1 {
                    return Err(Error::Config("sobolev order s must be at least 1".into()));
                }
                Ok(())
            }
            FeatureMapSpec::Categorical { cardinality, .. } => {
                if *cardinality < 1 {
                    return Err(Error::Config("categorical map needs |E| ≥ 1".into()));
                }
                Ok(())
            }
        }
    }

    /// Frequencies of the map's coordinates, one vector per coordinate.
    /// A linear map reports the single pseudo-frequency `[0]`.
    pub fn frequencies(&self) -> Vec<Vec<i64>> {
        match self {
            FeatureMapSpec::Linear { .. } => vec![vec![0]],
            FeatureMapSpec::Fourier { inputs, m, .. } => fourier_frequencies(*m, inputs.len()),
            FeatureMapSpec::Categorical { cardinality, .. } => {
                fourier_frequencies(cardinality / 2, 1)
            }
        }
    }
}

/// All `k ∈ {-m..m}^q` in odometer order, last axis fastest.
pub fn fourier_frequencies(m: usize, q: usize) -> Vec<Vec<i64>> {
    let m = m as i64;
    let mut out = Vec::with_capacity((2 * m as usize + 1).pow(q as u32));
    let mut k = vec![-m; q];
    loop {
        out.push(k.clone());
        let mut axis = q;
        loop {
            if axis == 0 {
                return out;
            }
            axis -= 1;
            if k[axis] < m {
                k[axis] += 1;
                break;
            }
            k[axis] = -m;
        }
    }
}

fn fourier_values(x: &[f64], m: usize) -> Vec<C64> {
    fourier_frequencies(m, x.len())
        .into_iter()
        .map(|k| {
            let phase: f64 = k.iter().zip(x).map(|(&ki, &xi)| ki as f64 * xi).sum::<f64>() / 2.0;
            C64::from_polar(1.0, phase)
        })
        .collect()
}

/// Evaluates `φ` on a full (rescaled) feature row.
pub fn eval_map(spec: &FeatureMapSpec, row: &[f64]) -> Result<Vec<C64>> {
    let fetch = |i: usize| {
        row.get(i)
            .copied()
            .ok_or_else(|| Error::shape(format!("feature column {i}"), format!("{} columns", row.len())))
    };
    match spec {
        FeatureMapSpec::Linear { input } => Ok(vec![C64::new(fetch(*input)?, 0.0)]),
        FeatureMapSpec::Fourier { inputs, m, .. } => {
            let x = inputs.iter().map(|&i| fetch(i)).collect::<Result<Vec<_>>>()?;
            Ok(fourier_values(&x, *m))
        }
        FeatureMapSpec::Categorical { input, cardinality } => {
            let x = fetch(*input)?;
            if category_index(x, *cardinality).is_none() {
                return Err(Error::UnknownCategory {
                    column: format!("#{input}"),
                    value: format!("{x}"),
                });
            }
            Ok(fourier_values(&[x], cardinality / 2))
        }
    }
}

/// Concatenated map of an additive component: `(φ_1(x), …, φ_p(x))`.
pub fn eval_effects(effects: &[FeatureMapSpec], row: &[f64]) -> Result<Vec<C64>> {
    let mut out = Vec::with_capacity(effects.iter().map(FeatureMapSpec::dim).sum());
    for e in effects {
        out.extend(eval_map(e, row)?);
    }
    Ok(out)
}

pub fn effects_dim(effects: &[FeatureMapSpec]) -> usize {
    effects.iter().map(FeatureMapSpec::dim).sum()
}

/// Block-diagonal `d2 × dim(θ)` matrix `Φ_t`; row ℓ carries `φ_ℓ(X_t)*`
/// in columns `offsets[ℓ] .. offsets[ℓ] + blocks[ℓ].len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub blocks: Vec<Vec<C64>>,
    pub offsets: Vec<usize>,
    pub dim: usize,
}

impl FeatureMatrix {
    pub fn rows(&self) -> usize {
        self.blocks.len()
    }

    pub fn to_dense(&self) -> CMatrix {
        let mut out = CMatrix::zeros(self.blocks.len(), self.dim);
        for (r, (block, &off)) in self.blocks.iter().zip(&self.offsets).enumerate() {
            for (j, v) in block.iter().enumerate() {
                out[(r, off + j)] = *v;
            }
        }
        out
    }
}

/// Builds `Φ_t` for one feature row; `specs[ℓ]` lists the effects of
/// output component ℓ.
pub fn build_feature_matrix(specs: &[Vec<FeatureMapSpec>], row: &[f64]) -> Result<FeatureMatrix> {
    let mut blocks = Vec::with_capacity(specs.len());
    let mut offsets = Vec::with_capacity(specs.len());
    let mut dim = 0;
    for effects in specs {
        let phi = eval_effects(effects, row)?;
        offsets.push(dim);
        dim += phi.len();
        blocks.push(phi.into_iter().map(|v| v.conj()).collect());
    }
    Ok(FeatureMatrix { blocks, offsets, dim })
}

/// Stacked `n × dim(θ)` design whose row j is `φ(X_{t_j})*`; single
/// output only.
pub fn stack_design(specs: &[Vec<FeatureMapSpec>], features: &DMatrix<f64>) -> Result<CMatrix> {
    if specs.len() != 1 {
        return Err(Error::shape("one output component", format!("{}", specs.len())));
    }
    stack_effects(&specs[0], features)
}

pub fn stack_effects(effects: &[FeatureMapSpec], features: &DMatrix<f64>) -> Result<CMatrix> {
    let n = features.nrows();
    let dim = effects_dim(effects);
    let mut out = CMatrix::zeros(n, dim);
    let mut row = vec![0.0; features.ncols()];
    for i in 0..n {
        for (j, v) in row.iter_mut().enumerate() {
            *v = features[(i, j)];
        }
        let phi = eval_effects(effects, &row)?;
        for (j, v) in phi.into_iter().enumerate() {
            out[(i, j)] = v.conj();
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::PI;

    fn close(a: C64, b: C64) -> bool {
        (a - b).norm() < 1e-12
    }

    #[test]
    fn fourier_examples() {
        let spec = FeatureMapSpec::fourier(0, 1);
        let at0 = eval_map(&spec, &[0.0]).unwrap();
        assert!(at0.iter().all(|v| close(*v, C64::new(1.0, 0.0))));
        let atpi = eval_map(&spec, &[PI]).unwrap();
        assert!(close(atpi[0], C64::new(0.0, -1.0)));
        assert!(close(atpi[1], C64::new(1.0, 0.0)));
        assert!(close(atpi[2], C64::new(0.0, 1.0)));
    }

    #[test]
    fn linear_example() {
        let v = eval_map(&FeatureMapSpec::linear(0), &[0.7]).unwrap();
        assert_eq!(v, vec![C64::new(0.7, 0.0)]);
    }

    #[test]
    fn dimensions() {
        assert_eq!(FeatureMapSpec::linear(0).dim(), 1);
        let f = FeatureMapSpec::Fourier { inputs: vec![0, 1, 2], m: 2, s: 2 };
        assert_eq!(f.dim(), 125);
        assert_eq!(eval_map(&f, &[0.1, 0.2, 0.3]).unwrap().len(), 125);
        assert_eq!(FeatureMapSpec::categorical(0, 7).dim(), 7);
        assert_eq!(FeatureMapSpec::categorical(0, 4).dim(), 5);
        assert_eq!(FeatureMapSpec::categorical(0, 1).dim(), 1);
    }

    #[test]
    fn odometer_order() {
        let k = fourier_frequencies(1, 2);
        assert_eq!(k[0], vec![-1, -1]);
        assert_eq!(k[1], vec![-1, 0]);
        assert_eq!(k[3], vec![0, -1]);
        assert_eq!(k[8], vec![1, 1]);
        assert_eq!(fourier_frequencies(0, 3), vec![vec![0, 0, 0]]);
    }

    #[test]
    fn categorical_rejects_off_grid_values() {
        let spec = FeatureMapSpec::categorical(0, 3);
        assert!(eval_map(&spec, &[0.0]).is_ok());
        assert!(matches!(
            eval_map(&spec, &[0.5]),
            Err(Error::UnknownCategory { .. })
        ));
    }

    #[test]
    fn feature_matrix_blocks() {
        let specs = vec![vec![FeatureMapSpec::linear(0)], vec![FeatureMapSpec::linear(1)]];
        let m = build_feature_matrix(&specs, &[0.3, -2.0]).unwrap().to_dense();
        assert_eq!(m.shape(), (2, 2));
        assert_eq!(m[(0, 0)].re, 0.3);
        assert_eq!(m[(1, 1)].re, -2.0);
        assert_eq!(m[(0, 1)], C64::new(0.0, 0.0));

        let single = vec![vec![FeatureMapSpec::fourier(0, 1)]];
        let m = build_feature_matrix(&single, &[PI]).unwrap().to_dense();
        assert_eq!(m.shape(), (1, 3));
        assert!(close(m[(0, 0)], C64::new(0.0, 1.0)));

        let mixed = vec![vec![FeatureMapSpec::fourier(0, 1)], vec![FeatureMapSpec::linear(1)]];
        let m = build_feature_matrix(&mixed, &[0.4, 1.1]).unwrap().to_dense();
        assert_eq!(m.shape(), (2, 4));
        assert_eq!(m[(0, 3)], C64::new(0.0, 0.0));
        for j in 0..3 {
            assert_eq!(m[(1, j)], C64::new(0.0, 0.0));
        }
        assert!(build_feature_matrix(&mixed, &[0.4]).is_err());
    }

    #[test]
    fn stack_design_examples() {
        let specs = vec![vec![FeatureMapSpec::linear(0)]];
        let x = DMatrix::from_column_slice(2, 1, &[1.0, -1.0]);
        let d = stack_design(&specs, &x).unwrap();
        assert_eq!(d[(0, 0)].re, 1.0);
        assert_eq!(d[(1, 0)].re, -1.0);

        let ones = stack_design(&[vec![FeatureMapSpec::fourier(0, 0)]], &x).unwrap();
        assert!(ones.iter().all(|v| close(*v, C64::new(1.0, 0.0))));

        let two = vec![specs[0].clone(), specs[0].clone()];
        assert!(stack_design(&two, &x).is_err());
    }

    #[test]
    fn gram_identity_matches_outer_products() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let n = 30;
        let x = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-PI..PI));
        let effects = vec![
            FeatureMapSpec::Fourier { inputs: vec![0, 1], m: 1, s: 2 },
            FeatureMapSpec::linear(1),
        ];
        let phi = stack_effects(&effects, &x).unwrap();
        let gram = phi.adjoint() * &phi;
        let dim = effects_dim(&effects);
        let mut sum = CMatrix::zeros(dim, dim);
        for i in 0..n {
            let row: Vec<f64> = x.row(i).iter().copied().collect();
            let v = eval_effects(&effects, &row).unwrap();
            for a in 0..dim {
                for b in 0..dim {
                    sum[(a, b)] += v[a] * v[b].conj();
                }
            }
        }
        assert!((gram - sum).norm() < 1e-12 * n as f64);
    }

    proptest! {
        #[test]
        fn conjugate_symmetric_coefficients_give_real_values(
            x in -PI..PI, y in -PI..PI, m in 0usize..4,
            seed in any::<u64>()
        ) {
            let spec = FeatureMapSpec::Fourier { inputs: vec![0, 1], m, s: 2 };
            let ks = spec.frequencies();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut theta = vec![C64::new(0.0, 0.0); ks.len()];
            for (i, k) in ks.iter().enumerate() {
                let mirror = ks.iter().position(|q| q.iter().zip(k).all(|(a, b)| *a == -*b)).unwrap();
                if mirror < i { theta[i] = theta[mirror].conj(); continue; }
                theta[i] = if mirror == i {
                    C64::new(rng.random_range(-1.0..1.0), 0.0)
                } else {
                    C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
                };
            }
            let phi = eval_map(&spec, &[x, y]).unwrap();
            // entries at k and -k are conjugates
            for (i, k) in ks.iter().enumerate() {
                let mirror = ks.iter().position(|q| q.iter().zip(k).all(|(a, b)| *a == -*b)).unwrap();
                prop_assert!((phi[i] - phi[mirror].conj()).norm() < 1e-12);
            }
            let value: C64 = phi.iter().zip(&theta).map(|(p, t)| p.conj() * t).sum();
            prop_assert!(value.im.abs() < 1e-10);
        }

        #[test]
        fn eval_is_deterministic(x in -PI..PI, m in 0usize..5) {
            let spec = FeatureMapSpec::fourier(0, m);
            prop_assert_eq!(eval_map(&spec, &[x]).unwrap(), eval_map(&spec, &[x]).unwrap());
        }
    }
}
