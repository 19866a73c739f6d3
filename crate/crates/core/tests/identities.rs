use std::sync::Arc;

use condinf::condcrit::StandardDraws;
use condinf::covest::{iid_covariance, newey_west, MomentPanel};
use condinf::linalg::quad_form;
use condinf::stats::{qlr, s_stat};
use condinf::{compute_h, CovarianceField, MomentProcess, ParamGrid};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Random PSD field from a random `T x Gk` panel so every block pair is consistent.
fn random_case(rng: &mut ChaCha8Rng, g: usize, k: usize) -> (MomentProcess, CovarianceField) {
    let points: Vec<Vec<f64>> = (0..g).map(|i| vec![i as f64 * 0.5]).collect();
    let null = rng.random_range(0..g);
    let grid = Arc::new(ParamGrid::new(points, null).unwrap());
    let t = 4 * g * k + 5;
    let x = DMatrix::from_fn(t, g * k, |_, _| rng.sample::<f64, _>(StandardNormal));
    let field = CovarianceField::from_assembled(grid.clone(), k, x.tr_mul(&x) / t as f64).unwrap();
    let values = (0..g * k).map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal)).collect();
    (MomentProcess::new(grid, values, k, t).unwrap(), field)
}

/// `S(theta_0) - min_i g(theta_i)' Sigma(theta_i, theta_i)^{-1} g(theta_i)` with
/// each block inverted from scratch.
fn brute_force_qlr(g: &MomentProcess, field: &CovarianceField) -> f64 {
    let null = g.grid().null_index();
    let form = |i: usize| {
        let inv = field.block(i, i).try_inverse().unwrap();
        quad_form(&inv, g.value(i))
    };
    let s = form(null);
    let min = (0..g.grid().len()).map(form).fold(f64::INFINITY, f64::min);
    s - min
}

#[test]
fn h_vanishes_at_the_null() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let (g, field) = random_case(&mut rng, 5, 3);
        let h = compute_h(&g, &field).unwrap();
        assert!(h.value(g.grid().null_index()).iter().all(|v| *v == 0.0));
    }
}

#[test]
fn g_is_rebuilt_from_h_and_the_null_value() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let (g, field) = random_case(&mut rng, 6, 4);
        let h = compute_h(&g, &field).unwrap();
        let mut buf = vec![0.0; g.k()];
        for i in 0..g.grid().len() {
            h.propagate_into(i, g.null_value(), &mut buf);
            for (a, b) in buf.iter().zip(g.value(i)) {
                assert!((a - b).abs() < 1e-10, "{a} vs {b}");
            }
        }
    }
}

#[test]
fn newey_west_without_lags_is_the_iid_estimator() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let grid = Arc::new(ParamGrid::new(vec![vec![0.0], vec![1.0], vec![2.0]], 1).unwrap());
    let x = DMatrix::from_fn(40, 6, |_, _| rng.sample::<f64, _>(StandardNormal) + 0.3);
    let panel = MomentPanel::new(grid, 2, x).unwrap();
    for center in [true, false] {
        let a = newey_west(&panel, 0, center).unwrap();
        let b = iid_covariance(&panel, center).unwrap();
        assert_eq!(a.assembled(), b.assembled());
    }
}

#[test]
fn qlr_matches_the_brute_force_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for case in 0..100 {
        let g_len = 1 + case % 6;
        let k = 1 + case % 4;
        let (g, field) = random_case(&mut rng, g_len, k);
        let h = compute_h(&g, &field).unwrap();
        let got = qlr(g.null_value(), &h, &field).unwrap();
        let want = brute_force_qlr(&g, &field);
        assert!((got - want).abs() < 1e-10 * (1.0 + want.abs()), "case {case}: {got} vs {want}");
    }
}

#[test]
fn null_value_is_uncorrelated_with_h_in_the_limit_experiment() {
    // Smooth separable field on 5 points with k = 2; xi = g(theta_0) and h are
    // computed from 10^4 Gaussian draws.
    let grid = Arc::new(ParamGrid::new((0..5).map(|i| vec![i as f64 * 0.4]).collect(), 2).unwrap());
    let sigma0 = nalgebra::dmatrix![1.0, 0.4; 0.4, 2.0];
    let field =
        CovarianceField::separable(grid.clone(), &sigma0, |a, b| (-(a[0] - b[0]).powi(2)).exp())
            .unwrap();
    let root = condinf::linalg::psd_root(field.assembled()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 10_000;
    let k = 2;
    let mut xs = Vec::with_capacity(n);
    let mut hs = Vec::with_capacity(n);
    for _ in 0..n {
        let z = nalgebra::DVector::from_fn(root.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let v = &root * z;
        let g = MomentProcess::new(grid.clone(), v.as_slice().to_vec(), k, 1).unwrap();
        let h = compute_h(&g, &field).unwrap();
        xs.push(g.null_value().to_vec());
        hs.push((0..grid.len()).flat_map(|i| h.value(i).to_vec()).collect::<Vec<_>>());
    }
    let corr = |a: &dyn Fn(usize) -> f64, b: &dyn Fn(usize) -> f64| {
        let ma = (0..n).map(a).sum::<f64>() / n as f64;
        let mb = (0..n).map(b).sum::<f64>() / n as f64;
        let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
        for r in 0..n {
            let (x, y) = (a(r) - ma, b(r) - mb);
            sab += x * y;
            saa += x * x;
            sbb += y * y;
        }
        sab / (saa * sbb).sqrt()
    };
    for i in 0..grid.len() {
        if i == grid.null_index() {
            continue;
        }
        for r in 0..k {
            for c in 0..k {
                let rho = corr(&|b| xs[b][c], &|b| hs[b][i * k + r]);
                assert!(rho.abs() < 0.03, "point {i} coords ({r},{c}): {rho}");
            }
        }
    }
}

#[test]
fn prefix_draws_are_the_leading_draws() {
    let d = StandardDraws::generate(&mut ChaCha8Rng::seed_from_u64(6), 50, 3);
    let p = d.prefix(20);
    assert_eq!(p.len(), 20);
    for b in 0..20 {
        assert_eq!(p.get(b), d.get(b));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn qlr_lies_between_zero_and_s(seed in 0u64..10_000, g_len in 1usize..7, k in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (g, field) = random_case(&mut rng, g_len, k);
        let h = compute_h(&g, &field).unwrap();
        let q = qlr(g.null_value(), &h, &field).unwrap();
        let s = s_stat(g.null_value(), &h, &field).unwrap();
        prop_assert!(q >= 0.0);
        prop_assert!(q <= s + 1e-12);
    }

    #[test]
    fn qlr_is_invariant_to_moment_rotation(seed in 0u64..10_000) {
        // g -> A g and Sigma -> A Sigma A' leaves every quadratic form unchanged.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (g, field) = random_case(&mut rng, 4, 3);
        let a = DMatrix::from_fn(3, 3, |r, c| if r == c { 2.0 } else { rng.sample::<f64, _>(StandardNormal) * 0.3 });
        let n = g.grid().len();
        let mut big = DMatrix::zeros(3 * n, 3 * n);
        for i in 0..n {
            big.view_mut((3 * i, 3 * i), (3, 3)).copy_from(&a);
        }
        let gv = nalgebra::DVector::from_column_slice(g.values());
        let g2 = MomentProcess::new(g.grid().clone(), (&big * gv).as_slice().to_vec(), 3, g.t()).unwrap();
        let f2 = CovarianceField::from_assembled(g.grid().clone(), 3, &big * field.assembled() * big.transpose()).unwrap();
        let q1 = qlr(g.null_value(), &compute_h(&g, &field).unwrap(), &field).unwrap();
        let q2 = qlr(g2.null_value(), &compute_h(&g2, &f2).unwrap(), &f2).unwrap();
        prop_assert!((q1 - q2).abs() < 1e-8 * (1.0 + q1.abs()));
    }
}
