use std::sync::Arc;

use condinf::concentrate::{
    concentrated_covariance, concentrated_moment, LongCovarianceField, LongMomentModel, ProfilePath,
};
use condinf::covest::{build_moment_process, iid_covariance, MomentPanel};
use condinf::montecarlo::{gen_qiv_data, stream_rng, QivSimDesign};
use condinf::quantile_iv::{concentrated_g, fit_profile, qiv_covariance, qiv_long_field, QivOptions, QuantileLongModel};
use condinf::{CovarianceField, ParamGrid, Result};
use nalgebra::{dmatrix, DMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[test]
fn two_by_two_sandwich_by_hand() {
    let grid = Arc::new(ParamGrid::new(vec![vec![0.0]], 0).unwrap());
    let sigma_l = dmatrix![
        2.0, 0.5, 0.3;
        0.5, 1.0, -0.2;
        0.3, -0.2, 0.5
    ];
    let long = LongCovarianceField::new(
        CovarianceField::from_assembled(grid.clone(), 3, sigma_l).unwrap(),
        2,
        1,
    )
    .unwrap();
    let path = ProfilePath::new(grid, vec![vec![0.0]], vec![dmatrix![1.0; -2.0]]).unwrap();
    let f = concentrated_covariance(&long, &path).unwrap();
    // Sigma_mm + M Sigma_bm + Sigma_mb M' + M Sigma_bb M'
    let want = dmatrix![3.1, -1.3; -1.3, 3.8];
    assert!((f.block(0, 0) - want).amax() < 1e-12);
}

#[test]
fn off_diagonal_blocks_use_both_jacobians() {
    let grid = Arc::new(ParamGrid::new(vec![vec![0.0], vec![1.0]], 0).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = DMatrix::from_fn(30, 4, |_, _| rng.sample::<f64, _>(StandardNormal));
    let sigma_l = x.tr_mul(&x) / 30.0;
    let long = LongCovarianceField::new(
        CovarianceField::from_assembled(grid.clone(), 2, sigma_l.clone()).unwrap(),
        1,
        1,
    )
    .unwrap();
    let (m0, m1) = (0.7, -1.4);
    let path = ProfilePath::new(grid, vec![vec![0.0]; 2], vec![dmatrix![m0], dmatrix![m1]]).unwrap();
    let f = concentrated_covariance(&long, &path).unwrap();
    let s = |a: usize, b: usize| sigma_l[(a, b)];
    let want = s(0, 2) + m0 * s(1, 2) + s(0, 3) * m1 + m0 * s(1, 3) * m1;
    assert!((f.block(0, 1)[(0, 0)] - want).abs() < 1e-12);
}

struct Linear {
    x: DMatrix<f64>,
}

impl LongMomentModel for Linear {
    fn k(&self) -> usize {
        2
    }
    fn p(&self) -> usize {
        0
    }
    fn q(&self) -> usize {
        1
    }
    fn t(&self) -> usize {
        self.x.nrows()
    }
    fn phi(&self, t: usize, _beta: &[f64], theta: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![self.x[(t, 0)] - theta[0], self.x[(t, 1)] * theta[0]])
    }
}

#[test]
fn no_nuisance_reduces_to_the_plain_pipeline() {
    let grid = Arc::new(ParamGrid::new(vec![vec![-1.0], vec![0.0], vec![0.5]], 1).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let model = Linear {
        x: DMatrix::from_fn(50, 2, |_, _| rng.sample::<f64, _>(StandardNormal)),
    };
    let panel = MomentPanel::from_fn(grid.clone(), 2, 50, |t, i| {
        model.phi(t, &[], grid.point(i)).unwrap()
    })
    .unwrap();
    let plain_g = build_moment_process(&panel).unwrap();
    let plain_f = iid_covariance(&panel, true).unwrap();

    let path = ProfilePath::empty(grid.clone(), 2);
    let g = concentrated_moment(&model, &path).unwrap();
    assert_eq!(g.values(), plain_g.values());
    let long = LongCovarianceField::new(plain_f.clone(), 2, 0).unwrap();
    let f = concentrated_covariance(&long, &path).unwrap();
    assert_eq!(f.assembled(), plain_f.assembled());
}

#[test]
fn quantile_iv_moments_agree_across_modules() {
    let design = QivSimDesign {
        n: 300,
        ..QivSimDesign::baseline(0.3)
    };
    let data = gen_qiv_data(&design, &mut stream_rng(3, 0)).unwrap();
    let axis = condinf::grid::linspace(0.0, 2.0, 9);
    let grid = Arc::new(ParamGrid::rectangular(&[axis], &[1.0]).unwrap());
    let profile = fit_profile(&data, grid, &QivOptions::default()).unwrap();

    let direct = concentrated_g(&data, &profile.path).unwrap();
    let generic = concentrated_moment(&QuantileLongModel { data: &data }, &profile.path).unwrap();
    for (a, b) in direct.values().iter().zip(generic.values()) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }

    let direct_f = qiv_covariance(&data, &profile).unwrap();
    let long = qiv_long_field(&data, &profile).unwrap();
    let generic_f = concentrated_covariance(&long, &profile.path).unwrap();
    let diff = (direct_f.assembled() - generic_f.assembled()).amax();
    assert!(diff < 1e-12, "max difference {diff}");
}
