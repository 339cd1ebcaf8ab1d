mod common;

use nalgebra::{DMatrix, DVector};
use pals::data::{covariance, standardize};
use pals::linear::{dc_select_lambda, fit_pals, LevelGrid};
use pals::metrics::delta;
use pals::Dataset;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn single_index(seed: u64, n: usize, p: usize) -> Dataset {
    let mut r = common::rng(seed);
    let x = common::normal_matrix(&mut r, n, p);
    let y = DVector::from_fn(n, |i, _| {
        let e: f64 = r.sample(StandardNormal);
        (x[(i, 0)] + x[(i, 1)]) + 0.2 * e * (1.0 + x[(i, 2)].abs())
    });
    Dataset::new(x, y).unwrap()
}

#[test]
fn recovers_single_index_direction() {
    let data = single_index(1, 2000, 5);
    let fit = fit_pals(&data, &LevelGrid::default(), 100.0, 1).unwrap();
    let mut truth = DMatrix::<f64>::zeros(5, 1);
    truth[(0, 0)] = 1.0;
    truth[(1, 0)] = 1.0;
    let d = delta(&truth, &fit.estimate.basis).unwrap().value();
    assert!(d < 0.1, "Δ = {d}");
}

#[test]
fn whitening_gives_identity_covariance() {
    let mut r = common::rng(2);
    let mix = common::normal_matrix(&mut r, 4, 4);
    let x = common::normal_matrix(&mut r, 300, 4) * mix;
    let data = Dataset::new(x, DVector::zeros(300)).unwrap();
    let (st, z) = standardize(&data).unwrap();
    assert!((covariance(&z) - DMatrix::identity(4, 4)).amax() < 1e-10);
    assert!(z.column_iter().all(|c| c.mean().abs() < 1e-12));
    let b = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0]);
    assert!((st.to_original(&st.to_whitened(&b)) - b).amax() < 1e-10);
}

#[test]
fn identical_runs_are_bit_identical() {
    let data = single_index(3, 150, 6);
    let a = fit_pals(&data, &LevelGrid::default(), 1.0, 2).unwrap();
    let b = fit_pals(&data, &LevelGrid::default(), 1.0, 2).unwrap();
    assert_eq!(a.estimate.basis, b.estimate.basis);
    assert_eq!(a.candidate.matrix, b.candidate.matrix);
}

#[test]
fn dc_selection_reports_every_lambda() {
    let data = single_index(4, 120, 4);
    let lambdas = [100.0, 0.1, 10.0, 1.0];
    let sel = dc_select_lambda(&data, &LevelGrid::default(), &lambdas, 1).unwrap();
    let tried: Vec<f64> = sel.scores.iter().map(|s| s.lambda).collect();
    assert_eq!(tried, vec![0.1, 1.0, 10.0, 100.0]);
    let best = sel
        .scores
        .iter()
        .map(|s| s.dcor2.unwrap())
        .fold(f64::NEG_INFINITY, f64::max);
    let chosen = sel.scores.iter().find(|s| s.lambda == sel.lambda).unwrap();
    assert!(chosen.dcor2.unwrap() >= best - 1e-12);
    let refit = fit_pals(&data, &LevelGrid::default(), sel.lambda, 1).unwrap();
    assert_eq!(refit.estimate.basis, sel.fit.estimate.basis);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn level_coefficients_are_affine_equivariant(seed in 0u64..10_000, l in 0.1f64..100.0) {
        // X ↦ XA + c maps every β_τ to A⁻¹β_τ
        let data = single_index(seed, 80, 4);
        let mut r = common::rng(seed + 9);
        let mut a = common::normal_matrix(&mut r, 4, 4);
        for k in 0..4 { a[(k, k)] += 3.0; }
        let shift: f64 = r.random_range(-3.0..3.0);
        let moved = data.map_predictors(|x| (x * &a).add_scalar(shift)).unwrap();
        let f0 = fit_pals(&data, &LevelGrid::default(), l, 2).unwrap();
        let f1 = fit_pals(&moved, &LevelGrid::default(), l, 2).unwrap();
        let inv = a.try_inverse().unwrap();
        for (b0, b1) in f0.levels.iter().zip(&f1.levels) {
            let want = &inv * &b0.beta;
            prop_assert!((&want - &b1.beta).amax() < 1e-6 * (1.0 + want.amax()));
        }
    }

    #[test]
    fn span_is_rotation_equivariant(seed in 0u64..10_000, l in 0.1f64..100.0) {
        let data = single_index(seed, 80, 4);
        let q = common::random_orthogonal(&mut common::rng(seed + 5), 4);
        let moved = data.map_predictors(|x| x * &q).unwrap();
        let f0 = fit_pals(&data, &LevelGrid::default(), l, 2).unwrap();
        let f1 = fit_pals(&moved, &LevelGrid::default(), l, 2).unwrap();
        let d = delta(&(q.transpose() * &f0.estimate.basis), &f1.estimate.basis).unwrap().value();
        prop_assert!(d < 1e-6, "Δ = {d}");
    }

    #[test]
    fn candidate_matrix_is_psd_and_reconstructs(seed in 0u64..10_000) {
        let data = single_index(seed, 60, 5);
        let fit = fit_pals(&data, &LevelGrid::new(&[0.25, 0.5, 0.75]).unwrap(), 3.0, 2).unwrap();
        let sum = fit.levels.iter().fold(DMatrix::<f64>::zeros(5, 5), |acc, f| acc + &f.beta * f.beta.transpose());
        prop_assert!((&sum - &fit.candidate.matrix).amax() < 1e-10);
        prop_assert!(fit.candidate.eigenvalues.iter().all(|&v| v >= -1e-10));
        let b = &fit.estimate.basis;
        prop_assert!((b.transpose() * b - DMatrix::<f64>::identity(2, 2)).amax() < 1e-10);
    }
}
