use std::sync::Arc;

use condinf::condcrit::{FixedSupplier, NullSupplier, TestOptions};
use condinf::gmm::{euler_grid, euler_process, CrraDesign};
use condinf::inference::{confidence_set, draws_for, run_test, Calibration, TestSpec};
use condinf::montecarlo::stream_rng;
use condinf::StatKind;

fn euler_case() -> (condinf::MomentProcess, Arc<condinf::CovarianceField>) {
    let data = CrraDesign { t: 200, ..CrraDesign::default() }
        .generate(&mut stream_rng(4, 0))
        .unwrap();
    let da = condinf::grid::linspace(0.85, 1.1, 11);
    let ga = condinf::grid::linspace(-6.0, 30.0, 13);
    let grid = Arc::new(euler_grid(&da, &ga, [0.97, 1.3]).unwrap());
    euler_process(&data, grid, 1).unwrap()
}

#[test]
fn qlr_set_matches_pointwise_tests() {
    let (g, field) = euler_case();
    let spec = TestSpec::new(StatKind::Qlr, TestOptions::new(0.1, 500).unwrap());
    let supplier = FixedSupplier { g: &g, field };
    let set = confidence_set(&supplier, &spec, true, &mut stream_rng(5, 0)).unwrap();
    let draws = draws_for(&spec, 3, &mut stream_rng(5, 0));
    let mut some_rejected = false;
    for i in 0..g.grid().len() {
        let (gi, fi) = supplier.supply(i).unwrap();
        let t = run_test(&gi, &fi, &spec, &draws).unwrap();
        assert_eq!(set.accepted[i], !t.reject, "grid point {i}");
        some_rejected |= t.reject;
    }
    assert!(some_rejected && set.n_accepted() > 0);
}

#[test]
fn chi2_sets_do_not_consume_draws() {
    let (g, field) = euler_case();
    let spec = TestSpec::new(StatKind::S, TestOptions::new(0.1, 500).unwrap())
        .with_calibration(Calibration::Chi2);
    let supplier = FixedSupplier { g: &g, field };
    let a = confidence_set(&supplier, &spec, true, &mut stream_rng(1, 0)).unwrap();
    let b = confidence_set(&supplier, &spec, true, &mut stream_rng(2, 0)).unwrap();
    assert_eq!(a.accepted, b.accepted);
}

#[test]
fn s_set_is_the_chi2_sublevel_set() {
    let (g, field) = euler_case();
    let spec = TestSpec::new(StatKind::S, TestOptions::new(0.1, 500).unwrap())
        .with_calibration(Calibration::Chi2);
    let set = confidence_set(&FixedSupplier { g: &g, field: field.clone() }, &spec, true, &mut stream_rng(1, 0)).unwrap();
    let crit = condinf::stats::chi2_quantile(3, 0.1);
    for i in 0..g.grid().len() {
        let s = condinf::linalg::quad_form(field.diag_inverse(i).unwrap(), g.value(i));
        assert_eq!(set.accepted[i], s <= crit);
    }
}
