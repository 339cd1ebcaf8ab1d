mod common;

use nalgebra::{DMatrix, DVector};
use pals::expectile::{
    sample_expectile, solve_dual, solve_primal, verify_kkt, DualOptions, ExpectileLevel,
    ExpectileProblem, SolverOptions,
};
use proptest::prelude::*;

fn lvl(t: f64) -> ExpectileLevel {
    ExpectileLevel::new(t).unwrap()
}

/// Plain gradient descent on the primal objective; slow but shares nothing
/// with the IRLS solver beyond the objective definition.
fn gradient_descent_oracle(z: &DMatrix<f64>, y: &DVector<f64>, tau: f64, lambda: f64) -> (f64, DVector<f64>) {
    let n = y.len() as f64;
    let lt = lambda / n;
    let p = z.ncols();
    let (mut a, mut th) = (0.0, DVector::<f64>::zeros(p));
    // curvature bound of the objective
    let zn = z.norm_squared();
    let step = 1.0 / (2.0 + 2.0 * lt * (n + zn));
    for _ in 0..200_000 {
        let r = y - z * &th - DVector::from_element(y.len(), a);
        let wr = r.map(|v| if v >= 0.0 { tau * v } else { (1.0 - tau) * v });
        let ga = -2.0 * lt * wr.sum();
        let gt = &th * 2.0 - z.tr_mul(&wr) * (2.0 * lt);
        let done = ga.abs() + gt.amax() < 1e-13;
        a -= step * ga;
        th -= gt * step;
        if done {
            break;
        }
    }
    (a, th)
}

#[test]
fn primal_matches_gradient_descent_oracle() {
    for seed in 0..6 {
        let (z, y) = common::expectile_instance(seed, 25, 3);
        for &(t, l) in &[(0.2, 1.0), (0.5, 10.0), (0.85, 0.3)] {
            let fit = solve_primal(&z, &y, lvl(t), l, &SolverOptions::default()).unwrap();
            let (a, th) = gradient_descent_oracle(&z, &y, t, l);
            assert!((fit.alpha - a).abs() < 1e-6, "seed {seed}: alpha {} vs {a}", fit.alpha);
            assert!((&fit.theta - th).amax() < 1e-6);
        }
    }
}

#[test]
fn intercept_only_problem_gives_sample_expectile() {
    let z = DMatrix::<f64>::zeros(5, 2);
    let y = DVector::from_vec(vec![1.0, 4.0, -2.0, 0.5, 3.0]);
    for t in [0.1, 0.5, 0.9] {
        let fit = solve_primal(&z, &y, lvl(t), 3.0, &SolverOptions::default()).unwrap();
        assert!((fit.alpha - sample_expectile(y.as_slice(), lvl(t))).abs() < 1e-10);
        assert!(fit.theta.amax() < 1e-12);
    }
    let mean = y.mean();
    assert!((sample_expectile(y.as_slice(), lvl(0.5)) - mean).abs() < 1e-12);
}

#[test]
fn larger_lambda_means_less_shrinkage() {
    let (z, y) = common::expectile_instance(11, 40, 4);
    let mut norms = Vec::new();
    for l in [0.01, 0.1, 1.0, 10.0, 100.0] {
        norms.push(solve_primal(&z, &y, lvl(0.5), l, &SolverOptions::default()).unwrap().theta.norm());
    }
    assert!(norms.windows(2).all(|w| w[0] < w[1]), "{norms:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fitted_point_beats_perturbations(seed in 0u64..10_000, t in 0.05f64..0.95, l in 0.05f64..50.0) {
        let (z, y) = common::expectile_instance(seed, 20, 3);
        let fit = solve_primal(&z, &y, lvl(t), l, &SolverOptions::default()).unwrap();
        let prob = ExpectileProblem::new(&z, &y, lvl(t), l).unwrap();
        let f0 = prob.objective(fit.alpha, &fit.theta);
        let mut r = common::rng(seed ^ 0xabc);
        for _ in 0..10 {
            let dt = common::normal_matrix(&mut r, 3, 1).column(0) * 1e-3;
            let da = dt[0];
            prop_assert!(prob.objective(fit.alpha + da, &(&fit.theta + &dt)) >= f0 - 1e-12);
        }
        let (ga, gt) = prob.gradient(fit.alpha, &fit.theta);
        prop_assert!(ga.abs() < 1e-6 && gt.amax() < 1e-6);
    }

    #[test]
    fn rotation_equivariance(seed in 0u64..10_000, t in 0.05f64..0.95) {
        let (z, y) = common::expectile_instance(seed, 30, 4);
        let q = common::random_orthogonal(&mut common::rng(seed + 1), 4);
        let a = solve_primal(&z, &y, lvl(t), 2.0, &SolverOptions::default()).unwrap();
        let b = solve_primal(&(&z * &q), &y, lvl(t), 2.0, &SolverOptions::default()).unwrap();
        prop_assert!((&q * &b.theta - &a.theta).amax() < 1e-7);
        prop_assert!((a.alpha - b.alpha).abs() < 1e-7);
    }

    #[test]
    fn level_reflection(seed in 0u64..10_000, t in 0.05f64..0.95) {
        // τ ↔ 1−τ with Y ↦ −Y negates the solution
        let (z, y) = common::expectile_instance(seed, 25, 2);
        let a = solve_primal(&z, &y, lvl(t), 5.0, &SolverOptions::default()).unwrap();
        let b = solve_primal(&z, &(-&y), lvl(1.0 - t), 5.0, &SolverOptions::default()).unwrap();
        prop_assert!((a.alpha + b.alpha).abs() < 1e-7);
        prop_assert!((&a.theta + &b.theta).amax() < 1e-7);
    }

    #[test]
    fn primal_dual_agreement(seed in 0u64..10_000, ti in 0usize..3, li in 0usize..3) {
        let t = [0.1, 0.5, 0.9][ti];
        let l = [0.1, 1.0, 10.0][li];
        let (z, y) = common::expectile_instance(seed, 15, 2);
        let p = solve_primal(&z, &y, lvl(t), l, &SolverOptions::default()).unwrap();
        let (dual, d) = solve_dual(&z, &y, lvl(t), l, &DualOptions::default()).unwrap();
        prop_assert!((&p.theta - &d.theta).norm() < 1e-4);
        let gap = d.duality_gap.unwrap();
        prop_assert!(gap >= -1e-9 && gap.abs() <= 1e-6 * (1.0 + d.objective.abs()));
        let kkt = verify_kkt(&d, &dual, &z, &y).unwrap();
        prop_assert!(kkt.max_violation() < 1e-5, "{kkt:?}");
    }
}
