mod common;

use std::f64::consts::PI;

use common::*;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use weakl::constraints::{assemble_block_penalty, orthogonal_complement_projector, PenaltyBlock, PenaltyMatrix};
use weakl::features::{stack_effects, FeatureMapSpec};
use weakl::solver::{empirical_risk, fit_weakl, min_eigenvalue, Design, WeaklProblem};
use weakl::{complexify, CMatrix, CVector, C64};

#[test]
fn closed_form_matches_dense_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for _ in 0..30 {
        let inst = random_instance(&mut rng);
        let theta = fit_weakl(&inst.problem).unwrap().theta;
        let oracle = dense_oracle(&inst.problem);
        assert!(rel_diff(&theta, &oracle) < 1e-8, "{}", rel_diff(&theta, &oracle));
    }
}

#[test]
fn row_permutation_leaves_solution_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    for _ in 0..20 {
        let inst = random_instance(&mut rng);
        let Design::Stacked(phi) = &inst.problem.design else { unreachable!() };
        let n = phi.nrows();
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let shuffled = CMatrix::from_fn(n, phi.ncols(), |i, k| phi[(order[i], k)]);
        let y: Vec<f64> = order.iter().map(|&i| inst.problem.targets[(i, 0)]).collect();
        let permuted = WeaklProblem::stacked(shuffled, &y, inst.problem.penalty.clone());
        let a = fit_weakl(&inst.problem).unwrap().theta;
        let b = fit_weakl(&permuted).unwrap().theta;
        assert!(rel_diff(&b, &a) < 1e-10);
    }
}

#[test]
fn finite_difference_gradient_vanishes_at_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let h = 1e-5;
    for _ in 0..20 {
        let inst = random_instance(&mut rng);
        let theta = fit_weakl(&inst.problem).unwrap().theta;
        let rhs = inst.problem.normal_equations().1;
        let scale = 1.0 + rhs.norm() / inst.problem.n() as f64;
        for k in 0..theta.len() {
            for dir in [C64::new(1.0, 0.0), C64::new(0.0, 1.0)] {
                let mut up = theta.clone();
                let mut down = theta.clone();
                up[k] += dir * h;
                down[k] -= dir * h;
                let g = (empirical_risk(&up, &inst.problem) - empirical_risk(&down, &inst.problem)) / (2.0 * h);
                assert!(g.abs() < 1e-6 * scale, "gradient {g}");
            }
        }
    }
}

#[test]
fn gram_eigenvalues_dominate_penalty() {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    for _ in 0..30 {
        let inst = random_instance(&mut rng);
        let (g, _) = inst.problem.normal_equations();
        let n = inst.problem.n() as f64;
        let floor = min_eigenvalue(&(inst.problem.penalty.gram() * C64::new(n, 0.0)));
        assert!(min_eigenvalue(&g) >= floor - 1e-9 * g.norm());
    }
}

#[test]
fn conjugate_symmetric_truth_gives_real_predictions() {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    for _ in 0..20 {
        let maps = random_maps(&mut rng);
        let x = random_features(&mut rng, &maps, 30);
        let phi = stack_effects(&maps, &x).unwrap();
        let truth = conjugate_symmetric(&mut rng, &maps);
        let v = &phi * &truth;
        assert!(v.iter().all(|z| z.im.abs() < 1e-12));
        let y: Vec<f64> = v.iter().map(|z| z.re).collect();
        let dim = truth.len();
        let penalty = assemble_block_penalty(&[PenaltyBlock::ridge("all", 1e-9, dim)], dim).unwrap();
        let fit = fit_weakl(&WeaklProblem::stacked(phi.clone(), &y, penalty)).unwrap().theta;
        let (_, imag) = weakl::solver::predict_stacked(&phi, &fit);
        assert!(imag < 1e-8);
    }
}

fn sobolev_test_error(n: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth = |x: f64| (x).sin() + 0.5 * (2.0 * x).cos() + 0.3 * (0.5 * x).sin();
    let x = DMatrix::from_fn(n, 1, |_, _| rng.random_range(-PI..PI));
    let y: Vec<f64> = (0..n).map(|i| truth(x[(i, 0)]) + 0.5 * rng.random_range(-1.0..1.0) * 3f64.sqrt()).collect();
    let map = FeatureMapSpec::fourier(0, 10);
    let s = 2.0;
    let lambda = (n as f64).powf(-2.0 * s / (2.0 * s + 1.0));
    let penalty = assemble_block_penalty(&[PenaltyBlock::for_map("x", lambda, &map)], map.dim()).unwrap();
    let phi = stack_effects(std::slice::from_ref(&map), &x).unwrap();
    let theta = fit_weakl(&WeaklProblem::stacked(phi, &y, penalty)).unwrap().theta;
    let grid = DMatrix::from_fn(400, 1, |i, _| -PI + 2.0 * PI * (i as f64 + 0.5) / 400.0);
    let pred = stack_effects(std::slice::from_ref(&map), &grid).unwrap() * theta;
    (0..400).map(|i| (pred[i].re - truth(grid[(i, 0)])).powi(2)).sum::<f64>() / 400.0
}

#[test]
fn sobolev_error_shrinks_with_more_data() {
    let small: f64 = (0..10).map(|r| sobolev_test_error(64, 200 + r)).sum::<f64>() / 10.0;
    let large: f64 = (0..10).map(|r| sobolev_test_error(1024, 300 + r)).sum::<f64>() / 10.0;
    assert!(large < small, "n=1024 error {large} vs n=64 error {small}");
}

#[test]
fn orthogonal_complement_is_hermitian_idempotent_and_annihilates() {
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    for _ in 0..30 {
        let rows = rng.random_range(2..=7);
        let cols = rng.random_range(1..rows);
        let p = random_complex(&mut rng, rows, cols);
        let c = orthogonal_complement_projector(&p).unwrap();
        assert!(spectral_norm(&(&c * &c - &c)) < 1e-10);
        assert!(spectral_norm(&(&c - c.adjoint())) < 1e-10);
        assert!(spectral_norm(&(&c * &p)) < 1e-10);
    }
}

#[test]
fn large_constraint_weight_lands_in_kernel() {
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    for _ in 0..20 {
        let inst = random_instance(&mut rng);
        let dim = inst.problem.dim();
        if dim < 2 {
            continue;
        }
        let p = random_complex(&mut rng, dim, dim - 1);
        let c = orthogonal_complement_projector(&p).unwrap();
        let mut constrained = inst.problem.clone();
        constrained.penalty = inst.problem.penalty.augment("kernel", &c, 1e8).unwrap();
        let theta = fit_weakl(&constrained).unwrap().theta;
        assert!((&c * &theta).norm() < 1e-4 * theta.norm().max(1e-12));
    }
}

#[test]
fn zero_penalty_block_with_rank_deficient_design_is_singular() {
    let x = DMatrix::from_column_slice(4, 2, &[1.0, 2.0, 3.0, 4.0, 2.0, 4.0, 6.0, 8.0]);
    let maps = [FeatureMapSpec::linear(0), FeatureMapSpec::linear(1)];
    let phi = stack_effects(&maps, &x).unwrap();
    let problem = WeaklProblem::stacked(phi, &[1.0, 2.0, 3.0, 4.0], PenaltyMatrix::zero(2));
    let err = fit_weakl(&problem).unwrap_err();
    assert_eq!(err.category(), weakl::error::ErrorCategory::Numerical);
}

#[test]
fn real_design_gives_real_coefficients() {
    let mut rng = ChaCha8Rng::seed_from_u64(108);
    let x = DMatrix::from_fn(25, 3, |_, _| rng.random_range(-1.0..1.0));
    let y: Vec<f64> = (0..25).map(|i| x[(i, 0)] - 2.0 * x[(i, 2)]).collect();
    let maps: Vec<FeatureMapSpec> = (0..3).map(FeatureMapSpec::linear).collect();
    let phi = complexify(&x);
    assert_eq!(phi, stack_effects(&maps, &x).unwrap());
    let pen = assemble_block_penalty(&[PenaltyBlock::ridge("b", 1e-12, 3)], 3).unwrap();
    let theta: CVector = fit_weakl(&WeaklProblem::stacked(phi, &y, pen)).unwrap().theta;
    assert!(theta.iter().all(|z| z.im == 0.0));
    assert!((theta[0].re - 1.0).abs() < 1e-6 && theta[1].re.abs() < 1e-6 && (theta[2].re + 2.0).abs() < 1e-6);
}
