//! One entry point for every statistic and calibration.
//!
//! Conditional calibration simulates critical values given `h`. Chi-square
//! calibration compares S with `chi2(k)`, K with `chi2(q)` and QLR with
//! `chi2(q)`; JK is always calibrated by its two chi-square parts.

use std::str::FromStr;
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::condcrit::{
    compute_h, conditional_critical_value_with, conditional_test_given_h, HProcess, NullSupplier, StandardDraws,
    StatisticFunctional, TestOptions,
};
use crate::error::{Error, Result};
use crate::field::CovarianceField;
use crate::process::MomentProcess;
use crate::result::{ConfidenceSet, TestResult};
use crate::stats::{
    chi2_quantile, chi2_sf, jk_test, k_stat, qlr, s_stat, score_matrix, KStat, Qlr,
    QlrWeighted, SStat, StatKind, Stencil, WeightField,
};

/// How the critical value is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Calibration {
    Conditional,
    Chi2,
}

impl FromStr for Calibration {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "conditional" => Ok(Calibration::Conditional),
            "chi2" => Ok(Calibration::Chi2),
            other => Err(Error::Invalid(format!(
                "unknown calibration '{other}' (expected conditional or chi2)"
            ))),
        }
    }
}

/// Everything needed to run one test besides the data.
#[derive(Debug, Clone)]
pub struct TestSpec {
    pub stat: StatKind,
    pub calibration: Calibration,
    pub options: TestOptions,
    /// `(alpha_k, alpha_j)` for JK; must sum to `options.alpha`.
    pub jk_split: (f64, f64),
    pub stencil: Stencil,
    /// Required for [`StatKind::QlrWeighted`].
    pub weights: Option<WeightField>,
}

impl TestSpec {
    pub fn new(stat: StatKind, options: TestOptions) -> Self {
        let a = options.alpha;
        Self {
            stat,
            calibration: Calibration::Conditional,
            options,
            jk_split: (0.8 * a, 0.2 * a),
            stencil: Stencil::Nearest,
            weights: None,
        }
    }

    pub fn with_calibration(mut self, calibration: Calibration) -> Self {
        self.calibration = calibration;
        self
    }

    pub fn with_stencil(mut self, stencil: Stencil) -> Self {
        self.stencil = stencil;
        self
    }

    pub fn with_jk_split(mut self, alpha_k: f64, alpha_j: f64) -> Self {
        self.jk_split = (alpha_k, alpha_j);
        self
    }

    pub fn with_weights(mut self, weights: WeightField) -> Self {
        self.weights = Some(weights);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (ak, aj) = self.jk_split;
        if self.stat == StatKind::Jk
            && (!(ak > 0.0 && aj > 0.0) || (ak + aj - self.options.alpha).abs() > 1e-12)
        {
            return Err(Error::Invalid(format!(
                "JK split ({ak}, {aj}) must be positive and sum to alpha = {}",
                self.options.alpha
            )));
        }
        if self.stat == StatKind::QlrWeighted && self.weights.is_none() {
            return Err(Error::Invalid("qlr-weighted needs a weight field".into()));
        }
        Ok(())
    }

    /// Whether the test consumes simulation draws.
    pub fn simulates(&self) -> bool {
        self.calibration == Calibration::Conditional && self.stat != StatKind::Jk
    }

    fn functional(&self) -> Result<Box<dyn StatisticFunctional + '_>> {
        Ok(match self.stat {
            StatKind::Qlr => Box::new(Qlr),
            StatKind::S => Box::new(SStat),
            StatKind::K => Box::new(KStat {
                stencil: self.stencil.clone(),
            }),
            StatKind::QlrWeighted => Box::new(QlrWeighted {
                weights: self
                    .weights
                    .clone()
                    .ok_or_else(|| Error::Invalid("qlr-weighted needs a weight field".into()))?,
            }),
            StatKind::Jk => {
                return Err(Error::Invalid("JK has no conditional calibration".into()))
            }
        })
    }
}

fn chi2_result(stat: f64, df: usize, alpha: f64, degraded: bool) -> TestResult {
    let crit = chi2_quantile(df, alpha);
    TestResult {
        statistic: stat,
        critical_value: crit,
        p_value: chi2_sf(df, stat),
        reject: stat > crit,
        n_draws: 0,
        alpha,
        degraded,
    }
}

/// Runs the test described by `spec` given `h` and the observed `xi = g(theta_0)`.
///
/// `draws` is ignored unless the test simulates.
pub fn test_given_h(
    xi: &[f64],
    h: &HProcess,
    field: &CovarianceField,
    spec: &TestSpec,
    draws: &StandardDraws,
) -> Result<TestResult> {
    spec.validate()?;
    let alpha = spec.options.alpha;
    let degraded = h.ridged() || field.diag_ridged(h.null_index());
    let q = h.grid().q();
    match (spec.stat, spec.calibration) {
        (StatKind::Jk, _) => {
            let d = score_matrix(h, &spec.stencil)?;
            let o = jk_test(xi, h, field, &d, spec.jk_split.0, spec.jk_split.1)?;
            Ok(TestResult {
                statistic: o.k + o.j,
                critical_value: o.k_critical,
                p_value: o.p_value,
                reject: o.reject,
                n_draws: 0,
                alpha,
                degraded: degraded || o.degenerate,
            })
        }
        (StatKind::S, Calibration::Chi2) => {
            Ok(chi2_result(s_stat(xi, h, field)?, h.k(), alpha, degraded))
        }
        (StatKind::K, Calibration::Chi2) => {
            let d = score_matrix(h, &spec.stencil)?;
            let kv = k_stat(xi, h, field, &d)?;
            let df = if kv.degenerate { h.k() } else { q };
            Ok(chi2_result(kv.value, df, alpha, degraded || kv.degenerate))
        }
        (StatKind::Qlr, Calibration::Chi2) => {
            Ok(chi2_result(qlr(xi, h, field)?, q, alpha, degraded))
        }
        (StatKind::QlrWeighted, Calibration::Chi2) => Err(Error::Invalid(
            "qlr-weighted has no chi-square calibration".into(),
        )),
        (_, Calibration::Conditional) => {
            let f = spec.functional()?;
            conditional_test_given_h(xi, h, field, f.as_ref(), &spec.options, draws)
        }
    }
}

/// Tests the null of `g`'s grid.
pub fn run_test(
    g: &MomentProcess,
    field: &CovarianceField,
    spec: &TestSpec,
    draws: &StandardDraws,
) -> Result<TestResult> {
    let h = compute_h(g, field)?;
    test_given_h(g.null_value(), &h, field, spec, draws)
}

/// Draws sized for `spec` (empty when the test does not simulate).
pub fn draws_for<R: RngCore + ?Sized>(spec: &TestSpec, k: usize, rng: &mut R) -> StandardDraws {
    let n = if spec.simulates() { spec.options.n_draws } else { 0 };
    StandardDraws::generate(rng, n, k)
}

/// Accept/reject only. Conditional QLR skips the simulation when the answer
/// is already known: `QLR* <= S*` draw by draw, so the conditional critical
/// value never exceeds the same-rank order statistic of `S*`, and a zero
/// statistic is never rejected.
fn accepts(
    g: &MomentProcess,
    field: &CovarianceField,
    spec: &TestSpec,
    draws: &StandardDraws,
) -> Result<bool> {
    let h = compute_h(g, field)?;
    if spec.stat == StatKind::Qlr && spec.calibration == Calibration::Conditional {
        let observed = qlr(g.null_value(), &h, field)?;
        if observed.is_nan() {
            return Err(Error::NonFinite("qlr statistic".into()));
        }
        if observed <= spec.options.epsilon {
            return Ok(true);
        }
        let bound = conditional_critical_value_with(&SStat, &h, field, spec.options.alpha, draws)?;
        if observed > bound.value + spec.options.epsilon {
            return Ok(false);
        }
    }
    Ok(!test_given_h(g.null_value(), &h, field, spec, draws)?.reject)
}

/// Confidence set by inverting the test in `spec` over every grid point.
///
/// With common random numbers one block of draws serves all candidates;
/// otherwise each candidate gets a seed drawn from `rng` in grid order.
pub fn confidence_set<R: RngCore + ?Sized>(
    supplier: &dyn NullSupplier,
    spec: &TestSpec,
    common_random_numbers: bool,
    rng: &mut R,
) -> Result<ConfidenceSet> {
    spec.validate()?;
    let grid: Arc<_> = supplier.grid().clone();
    let n = grid.len();
    let k = supplier.supply(grid.null_index())?.0.k();
    let shared = common_random_numbers.then(|| draws_for(spec, k, rng));
    let seeds: Vec<u64> = if shared.is_none() {
        (0..n).map(|_| rng.next_u64()).collect()
    } else {
        Vec::new()
    };
    let outcomes: Vec<Result<bool>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let (g, field) = supplier.supply(i)?;
            match &shared {
                Some(d) => accepts(&g, &field, spec, d),
                None => {
                    let mut r = ChaCha8Rng::seed_from_u64(seeds[i]);
                    let d = draws_for(spec, k, &mut r);
                    accepts(&g, &field, spec, &d)
                }
            }
        })
        .collect();
    let mut accepted = vec![false; n];
    let mut failed = vec![false; n];
    for (i, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(a) => accepted[i] = a,
            Err(_) => failed[i] = true,
        }
    }
    Ok(ConfidenceSet {
        grid,
        accepted,
        failed,
        level: 1.0 - spec.options.alpha,
    })
}
