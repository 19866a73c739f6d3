//! Simulation designs and experiment drivers.
//!
//! Every replication draws its data from its own ChaCha stream (stream `2r`
//! of the master seed) and its simulation draws from stream `2r + 1`, so
//! results do not depend on thread scheduling. Within a replication all
//! statistics and alternatives share the same data and the same standard
//! normal draws.

use std::io::Write;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::condcrit::{
    compute_h, conditional_critical_value_with, conditional_test_given_h, HProcess,
    StandardDraws, StatisticFunctional, TestOptions,
};
use crate::error::{Error, Result};
use crate::field::CovarianceField;
use crate::grid::{linspace, ParamGrid};
use crate::inference::{self, TestSpec};
use crate::linalg;
use crate::process::{MeanFunction, MomentProcess};
use crate::quantile_iv::{qiv_fit, QivOptions, QuantileIVData};
use crate::result::TestResult;
use crate::stats::{chi2_quantile, Qlr, StatKind};

/// Random generator for stream `stream` of `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// The quantile-IV location-scale design.
///
/// `(xi_U, xi_D, xi_Z1..xi_Zk)` are jointly normal with unit variances,
/// `cov(xi_U, xi_D) = rho`, `cov(xi_D, xi_Zj) = pi` and all other covariances
/// zero. `U = Phi(xi_U)`, `D` and `Z` follow [`Margins`], and
/// `Y = g1 + g2 D + (g3 + g4 D)(U - 1/2)`; the only control is a constant.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct QivSimDesign {
    pub rho: f64,
    pub pi: f64,
    pub gammas: [f64; 4],
    pub n: usize,
    pub k: usize,
    pub tau: f64,
    #[serde(default)]
    pub margins: Margins,
}

/// Marginal transforms of the copula draws for `D` and `Z`.
///
/// With normal `D` the scale `g3 + g4 D` is negative with positive
/// probability, and then `P(Y <= g1 + g2 D | Z)` differs from `1/2` whenever
/// `rho != 0` and `pi != 0`, so `theta = g2` no longer solves the moment
/// condition. Uniform margins keep the scale positive for non-negative gammas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Margins {
    /// `D = Phi(xi_D)`, `Z = Phi(xi_Z)`.
    #[default]
    Uniform,
    /// `D = xi_D`, `Z = xi_Z`.
    Normal,
}

impl QivSimDesign {
    /// Five instruments, 1000 observations, `rho = 0.25`, unit gammas, median.
    pub fn baseline(pi: f64) -> Self {
        Self {
            rho: 0.25,
            pi,
            gammas: [1.0; 4],
            n: 1000,
            k: 5,
            tau: 0.5,
            margins: Margins::Uniform,
        }
    }

    /// The correlation matrix is PSD iff `k pi^2 + rho^2 <= 1`.
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.n < 2 {
            return Err(Error::Invalid("need k >= 1 and n >= 2".into()));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::Invalid(format!("tau must lie in (0,1), got {}", self.tau)));
        }
        let load = self.k as f64 * self.pi * self.pi + self.rho * self.rho;
        if !(load <= 1.0 + 1e-12) || !self.gammas.iter().all(|g| g.is_finite()) {
            return Err(Error::Invalid(format!(
                "copula correlation matrix is not PSD: k pi^2 + rho^2 = {load} > 1"
            )));
        }
        Ok(())
    }

    /// The structural coefficient on `D` at quantile `tau`.
    pub fn true_theta(&self) -> f64 {
        self.gammas[1] + self.gammas[3] * (self.tau - 0.5)
    }
}

/// One sample from the quantile-IV design.
pub fn gen_qiv_data<R: Rng + ?Sized>(design: &QivSimDesign, rng: &mut R) -> Result<QuantileIVData> {
    design.validate()?;
    let (n, k) = (design.n, design.k);
    let phi = Normal::new(0.0, 1.0).expect("standard normal");
    let resid_d = (1.0 - k as f64 * design.pi * design.pi).max(0.0).sqrt();
    // xi_D = pi sum_j xi_Zj + a w,  xi_U = b w + c e with a b = rho.
    let b = if resid_d > 0.0 { design.rho / resid_d } else { 0.0 };
    let c_u = (1.0 - b * b).max(0.0).sqrt();
    let [g1, g2, g3, g4] = design.gammas;
    let mut y = Vec::with_capacity(n);
    let mut d = DMatrix::zeros(n, 1);
    let mut z = DMatrix::zeros(n, k);
    for t in 0..n {
        let margin = |v: f64| match design.margins {
            Margins::Uniform => phi.cdf(v),
            Margins::Normal => v,
        };
        let mut zsum = 0.0;
        for j in 0..k {
            let v: f64 = rng.sample(StandardNormal);
            z[(t, j)] = margin(v);
            zsum += v;
        }
        let w: f64 = rng.sample(StandardNormal);
        let e: f64 = rng.sample(StandardNormal);
        let xd = margin(design.pi * zsum + resid_d * w);
        let xu = b * w + c_u * e;
        let u = phi.cdf(xu);
        d[(t, 0)] = xd;
        y.push(g1 + g2 * xd + (g3 + g4 * xd) * (u - 0.5));
    }
    QuantileIVData::new(y, d, DMatrix::from_element(n, 1, 1.0), z, design.tau)
}

/// A root `L` of a field with `L L' = assembled`, kept in separable form when possible.
#[derive(Debug, Clone)]
enum FieldRoot {
    Full(DMatrix<f64>),
    /// `Sigma(i, j) = R(i, j) Sigma0`: root `L_R kron L_0`.
    Separable {
        corr: DMatrix<f64>,
        sigma: DMatrix<f64>,
    },
}

/// The limit experiment `g(theta) = m(theta) + G(theta)` with `G` a centered
/// Gaussian process with covariance `field`.
#[derive(Debug, Clone)]
pub struct LimitDesign {
    pub mean: MeanFunction,
    pub field: Arc<CovarianceField>,
    root: FieldRoot,
}

impl LimitDesign {
    pub fn new(mean: MeanFunction, field: Arc<CovarianceField>) -> Result<Self> {
        Self::check(&mean, &field)?;
        let root = FieldRoot::Full(linalg::psd_root(field.assembled())?);
        Ok(Self { mean, field, root })
    }

    /// Separable field `rho(theta_i, theta_j) Sigma0`; the root is computed from
    /// the `G x G` correlation matrix only.
    pub fn separable(
        mean: MeanFunction,
        sigma0: &DMatrix<f64>,
        rho: impl Fn(&[f64], &[f64]) -> f64,
    ) -> Result<Self> {
        let grid = mean.grid().clone();
        let n = grid.len();
        let r = DMatrix::from_fn(n, n, |i, j| rho(grid.point(i), grid.point(j)));
        let field = Arc::new(CovarianceField::separable(grid, sigma0, &rho)?);
        Self::check(&mean, &field)?;
        let root = FieldRoot::Separable {
            corr: linalg::psd_root(&r)?,
            sigma: linalg::psd_root(sigma0)?,
        };
        Ok(Self { mean, field, root })
    }

    fn check(mean: &MeanFunction, field: &CovarianceField) -> Result<()> {
        if mean.grid().points() != field.grid().points() || mean.k() != field.k() {
            return Err(Error::Dimension("mean and field disagree on grid or k".into()));
        }
        if !mean.is_null() {
            return Err(Error::Invalid("the mean must vanish at the null".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> &Arc<ParamGrid> {
        self.mean.grid()
    }

    pub fn k(&self) -> usize {
        self.mean.k()
    }
}

/// One draw of `g = m + G`.
pub fn gen_limit_draw<R: Rng + ?Sized>(design: &LimitDesign, rng: &mut R) -> Result<MomentProcess> {
    let k = design.k();
    let n = design.grid().len();
    let mut values = design.mean.values().to_vec();
    match &design.root {
        FieldRoot::Full(l) => {
            let z = nalgebra::DVector::from_fn(l.ncols(), |_, _| rng.sample(StandardNormal));
            let x = l * z;
            for (v, e) in values.iter_mut().zip(x.iter()) {
                *v += e;
            }
        }
        FieldRoot::Separable { corr, sigma } => {
            let z = DMatrix::from_fn(k, corr.ncols(), |_, _| rng.sample(StandardNormal));
            // Column i of sigma * z * corr' is G(theta_i).
            let x = sigma * z * corr.transpose();
            for i in 0..n {
                for r in 0..k {
                    values[i * k + r] += x[(r, i)];
                }
            }
        }
    }
    MomentProcess::new(design.grid().clone(), values, k, 1)
}

/// Strongly identified design: `m(theta) = scale * M (theta - theta_0)` with
/// the smooth separable field `exp(-|theta_i - theta_j|^2 / (2 l^2)) Sigma0`.
#[derive(Debug, Clone)]
pub struct StrongIdDesign {
    pub grid: Arc<ParamGrid>,
    pub slope: DMatrix<f64>,
    pub scale: f64,
    pub sigma0: DMatrix<f64>,
    pub length_scale: f64,
}

impl StrongIdDesign {
    /// `k = 3` moments with a fixed slope. The grid spans `theta_0 +/- 4 / scale`,
    /// about four local standard deviations of the minimizer, with 401 points
    /// for `q = 1` and 33 per coordinate for `q = 2`. Coarser grids put a visible
    /// atom at zero in the QLR distribution (the null is then the grid minimizer
    /// too often).
    pub fn standard(q: usize, scale: f64) -> Result<Self> {
        if !(scale > 0.0) {
            return Err(Error::Invalid(format!("scale must be positive, got {scale}")));
        }
        let half = 4.0 / scale;
        let n = match q {
            1 => 401,
            2 => 33,
            _ => return Err(Error::Invalid(format!("standard design has q in {{1, 2}}, got {q}"))),
        };
        let axis = linspace(-half, half, n);
        let null = vec![0.0; q];
        let axes = vec![axis; q];
        let grid = Arc::new(ParamGrid::rectangular(&axes, &null)?);
        let slope = match q {
            1 => DMatrix::from_column_slice(3, 1, &[1.0, 0.5, -0.5]),
            _ => DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.5, 1.0, -0.5, 0.5]),
        };
        let sigma0 = DMatrix::from_row_slice(3, 3, &[1.0, 0.3, 0.0, 0.3, 1.0, 0.2, 0.0, 0.2, 1.0]);
        Self::new(grid, slope, scale, sigma0, 1.0)
    }

    pub fn new(
        grid: Arc<ParamGrid>,
        slope: DMatrix<f64>,
        scale: f64,
        sigma0: DMatrix<f64>,
        length_scale: f64,
    ) -> Result<Self> {
        if slope.ncols() != grid.q() || slope.nrows() != sigma0.nrows() {
            return Err(Error::Dimension("slope must be k x q".into()));
        }
        let inv = linalg::spd_inverse(&sigma0)?.x;
        let info = slope.transpose() * inv * &slope;
        let (lo, hi) = linalg::eig_range(&info);
        if !(lo > 1e-10 * hi.max(f64::MIN_POSITIVE)) {
            return Err(Error::Invalid("M' Sigma0^{-1} M is singular".into()));
        }
        if !(length_scale > 0.0) {
            return Err(Error::Invalid("length scale must be positive".into()));
        }
        Ok(Self {
            grid,
            slope,
            scale,
            sigma0,
            length_scale,
        })
    }

    pub fn limit_design(&self) -> Result<LimitDesign> {
        let k = self.slope.nrows();
        let t0 = self.grid.null_point().to_vec();
        let mean = MeanFunction::from_fn(self.grid.clone(), k, |th| {
            let d = nalgebra::DVector::from_iterator(th.len(), th.iter().zip(&t0).map(|(a, b)| a - b));
            (&self.slope * d * self.scale).iter().cloned().collect()
        })?;
        let l2 = 2.0 * self.length_scale * self.length_scale;
        LimitDesign::separable(mean, &self.sigma0, move |a, b| {
            let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
            (-d2 / l2).exp()
        })
    }
}

/// Mean shapes on a one-dimensional grid, all zero at the null: flat zero, a
/// narrow spike away from the null, and a broad weakly identified hump.
pub fn null_means(grid: &Arc<ParamGrid>, k: usize) -> Result<Vec<(String, MeanFunction)>> {
    let t0 = grid.null_point()[0];
    let lo = grid.points().iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
    let hi = grid.points().iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let spike_at = t0 + 0.3 * span;
    let width = 0.03 * span;
    let dir: Vec<f64> = (0..k).map(|r| if r % 2 == 0 { 1.0 } else { -0.5 }).collect();
    let spike = MeanFunction::from_fn(grid.clone(), k, |th| {
        // Compact support so the mean is exactly zero at the null.
        let u = (th[0] - spike_at) / width;
        let s = if u.abs() < 1.0 { 6.0 * (1.0 - u * u).powi(2) } else { 0.0 };
        dir.iter().map(|d| d * s).collect()
    })?;
    let hump = MeanFunction::from_fn(grid.clone(), k, |th| {
        let x = (th[0] - t0) / span;
        let s = 1.5 * x * x * (-4.0 * x * x).exp() * 16.0;
        (0..k).map(|r| s * (1.0 + 0.3 * r as f64)).collect()
    })?;
    Ok(vec![
        ("zero".into(), MeanFunction::zero(grid.clone(), k)),
        ("spike".into(), spike),
        ("hump".into(), hump),
    ])
}

/// Produces the moment process and field for one replication.
pub trait Scenario: Sync {
    fn label(&self) -> String;

    fn k(&self) -> usize;

    fn grid(&self) -> &Arc<ParamGrid>;

    fn replicate(&self, rng: &mut ChaCha8Rng) -> Result<(MomentProcess, Arc<CovarianceField>)>;
}

impl Scenario for LimitDesign {
    fn label(&self) -> String {
        "limit".into()
    }

    fn k(&self) -> usize {
        self.mean.k()
    }

    fn grid(&self) -> &Arc<ParamGrid> {
        self.mean.grid()
    }

    fn replicate(&self, rng: &mut ChaCha8Rng) -> Result<(MomentProcess, Arc<CovarianceField>)> {
        Ok((gen_limit_draw(self, rng)?, self.field.clone()))
    }
}

/// Quantile-IV samples analysed over a fixed `theta` grid.
#[derive(Debug, Clone)]
pub struct QivScenario {
    pub design: QivSimDesign,
    pub grid: Arc<ParamGrid>,
    pub options: QivOptions,
}

impl QivScenario {
    /// Grid from `lo` to `hi` in steps of `step`, with the true `theta` as null.
    pub fn new(design: QivSimDesign, lo: f64, hi: f64, step: f64) -> Result<Self> {
        design.validate()?;
        let grid = Arc::new(axis_grid(lo, hi, step, design.true_theta())?);
        Ok(Self {
            design,
            grid,
            options: QivOptions::default(),
        })
    }
}

/// One-dimensional grid `lo, lo + step, ..., hi` with `null` on it.
pub fn axis_grid(lo: f64, hi: f64, step: f64, null: f64) -> Result<ParamGrid> {
    if !(step > 0.0) || !(hi > lo) {
        return Err(Error::Grid(format!("invalid range [{lo}, {hi}] with step {step}")));
    }
    let n = ((hi - lo) / step).round() as usize + 1;
    let axis = linspace(lo, hi, n);
    ParamGrid::rectangular(&[axis], &[null])
}

impl Scenario for QivScenario {
    fn label(&self) -> String {
        format!(
            "qiv k={} n={} rho={} pi={} tau={}",
            self.design.k, self.design.n, self.design.rho, self.design.pi, self.design.tau
        )
    }

    fn k(&self) -> usize {
        self.design.k
    }

    fn grid(&self) -> &Arc<ParamGrid> {
        &self.grid
    }

    fn replicate(&self, rng: &mut ChaCha8Rng) -> Result<(MomentProcess, Arc<CovarianceField>)> {
        let data = gen_qiv_data(&self.design, rng)?;
        let fit = qiv_fit(&data, self.grid.clone(), &self.options)?;
        Ok((fit.g, fit.field))
    }
}

/// A test applied inside experiments.
pub trait Tester: Sync {
    fn label(&self) -> String;

    fn calibration(&self) -> String;

    /// Simulation draws consumed (0 for chi-square calibrated tests).
    fn n_draws(&self) -> usize;

    fn run(
        &self,
        xi: &[f64],
        h: &HProcess,
        field: &CovarianceField,
        draws: &StandardDraws,
    ) -> Result<TestResult>;
}

impl Tester for TestSpec {
    fn label(&self) -> String {
        match (self.stat, self.calibration) {
            (StatKind::S, inference::Calibration::Chi2) => "ar".into(),
            (s, _) => s.as_str().into(),
        }
    }

    fn calibration(&self) -> String {
        if self.stat == StatKind::Jk {
            return "chi2".into();
        }
        match self.calibration {
            inference::Calibration::Conditional => "conditional".into(),
            inference::Calibration::Chi2 => "chi2".into(),
        }
    }

    fn n_draws(&self) -> usize {
        if self.simulates() {
            self.options.n_draws
        } else {
            0
        }
    }

    fn run(
        &self,
        xi: &[f64],
        h: &HProcess,
        field: &CovarianceField,
        draws: &StandardDraws,
    ) -> Result<TestResult> {
        inference::test_given_h(xi, h, field, self, &draws.prefix(Tester::n_draws(self)))
    }
}

/// A conditional test with an arbitrary statistic.
pub struct FunctionalTester<S> {
    pub stat: S,
    pub options: TestOptions,
}

impl<S: StatisticFunctional> Tester for FunctionalTester<S> {
    fn label(&self) -> String {
        self.stat.name().into()
    }

    fn calibration(&self) -> String {
        "conditional".into()
    }

    fn n_draws(&self) -> usize {
        self.options.n_draws
    }

    fn run(
        &self,
        xi: &[f64],
        h: &HProcess,
        field: &CovarianceField,
        draws: &StandardDraws,
    ) -> Result<TestResult> {
        conditional_test_given_h(xi, h, field, &self.stat, &self.options, &draws.prefix(self.options.n_draws))
    }
}

/// Rejection frequency of one test at one null value.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct RateRow {
    pub scenario: String,
    pub statistic: String,
    pub calibration: String,
    /// Tested null value (first coordinate shown in CSV when `q = 1`).
    pub theta: Vec<f64>,
    pub n_reps: usize,
    /// Replications whose test completed.
    pub n_ok: usize,
    pub rejections: usize,
    pub rate: f64,
    /// `sqrt(rate (1 - rate) / n_ok)`.
    pub se: f64,
}

/// A replication (or one test within it) that failed.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Failure {
    pub rep: usize,
    pub statistic: Option<String>,
    pub theta: Option<Vec<f64>>,
    pub message: String,
}

/// Rows plus the failures excluded from them.
#[derive(Debug, Clone, Default, serde::Serialize)]
pub struct ExperimentOutput {
    pub rows: Vec<RateRow>,
    pub failures: Vec<Failure>,
}

impl ExperimentOutput {
    /// The row for `statistic` at `theta`.
    pub fn row(&self, statistic: &str, theta: &[f64]) -> Option<&RateRow> {
        self.rows.iter().find(|r| {
            r.statistic == statistic
                && r.theta.len() == theta.len()
                && r.theta.iter().zip(theta).all(|(a, b)| (a - b).abs() < 1e-9)
        })
    }

    /// Long-format CSV: one row per scenario, statistic and null value.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "scenario,statistic,calibration,theta,n_reps,n_ok,rejections,rate,se")?;
        for r in &self.rows {
            let theta: Vec<String> = r.theta.iter().map(|v| format!("{v}")).collect();
            writeln!(
                w,
                "\"{}\",{},{},{},{},{},{},{},{}",
                r.scenario,
                r.statistic,
                r.calibration,
                theta.join(";"),
                r.n_reps,
                r.n_ok,
                r.rejections,
                r.rate,
                r.se
            )?;
        }
        Ok(())
    }

    /// One line per failure: replication, statistic, null value, message.
    pub fn write_failures<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "rep,statistic,theta,message")?;
        for f in &self.failures {
            let theta = f
                .theta
                .as_ref()
                .map(|t| t.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(";"))
                .unwrap_or_default();
            writeln!(
                w,
                "{},{},{},\"{}\"",
                f.rep,
                f.statistic.as_deref().unwrap_or(""),
                theta,
                f.message.replace('"', "'")
            )?;
        }
        Ok(())
    }
}

/// Monte Carlo standard error of a rate.
pub fn rate_se(rate: f64, n: usize) -> f64 {
    if n == 0 {
        return f64::NAN;
    }
    (rate * (1.0 - rate) / n as f64).sqrt()
}

type RepOutcome = std::result::Result<Vec<Vec<Result<bool>>>, Error>;

/// Rejection rates of every tester at every null index in `nulls`.
///
/// The data of a replication are generated once and re-indexed for each null.
pub fn power_curve(
    scenario: &dyn Scenario,
    testers: &[&dyn Tester],
    nulls: &[usize],
    n_reps: usize,
    seed: u64,
) -> Result<ExperimentOutput> {
    let grid = scenario.grid().clone();
    if let Some(bad) = nulls.iter().find(|i| **i >= grid.len()) {
        return Err(Error::Grid(format!("alternative index {bad} is outside the grid")));
    }
    let max_draws = testers.iter().map(|t| t.n_draws()).max().unwrap_or(0);
    let k = scenario.k();
    let outcomes: Vec<RepOutcome> = (0..n_reps)
        .into_par_iter()
        .map(|rep| {
            let mut data_rng = stream_rng(seed, 2 * rep as u64);
            let mut draw_rng = stream_rng(seed, 2 * rep as u64 + 1);
            let (g, field) = scenario.replicate(&mut data_rng)?;
            let draws = StandardDraws::generate(&mut draw_rng, max_draws, k);
            Ok(nulls
                .iter()
                .map(|&a| {
                    let prepared = (|| {
                        let g = if a == g.grid().null_index() {
                            g.clone()
                        } else {
                            g.regrid(Arc::new(g.grid().with_null(a)?))?
                        };
                        let h = compute_h(&g, &field)?;
                        Ok((g, h))
                    })();
                    match prepared {
                        Ok((g, h)) => testers
                            .iter()
                            .map(|t| t.run(g.null_value(), &h, &field, &draws).map(|r| r.reject))
                            .collect(),
                        Err(e) => {
                            let e: Error = e;
                            testers.iter().map(|_| Err(clone_error(&e))).collect()
                        }
                    }
                })
                .collect())
        })
        .collect();

    let mut out = ExperimentOutput::default();
    let mut counts = vec![vec![(0usize, 0usize); testers.len()]; nulls.len()];
    for (rep, o) in outcomes.into_iter().enumerate() {
        match o {
            Err(e) => out.failures.push(Failure {
                rep,
                statistic: None,
                theta: None,
                message: e.to_string(),
            }),
            Ok(per_null) => {
                for (ai, per_test) in per_null.into_iter().enumerate() {
                    for (ti, r) in per_test.into_iter().enumerate() {
                        match r {
                            Ok(rej) => {
                                counts[ai][ti].0 += 1;
                                counts[ai][ti].1 += rej as usize;
                            }
                            Err(e) => out.failures.push(Failure {
                                rep,
                                statistic: Some(testers[ti].label()),
                                theta: Some(grid.point(nulls[ai]).to_vec()),
                                message: e.to_string(),
                            }),
                        }
                    }
                }
            }
        }
    }
    let label = scenario.label();
    for (ai, &a) in nulls.iter().enumerate() {
        for (ti, t) in testers.iter().enumerate() {
            let (ok, rej) = counts[ai][ti];
            let rate = if ok > 0 { rej as f64 / ok as f64 } else { f64::NAN };
            out.rows.push(RateRow {
                scenario: label.clone(),
                statistic: t.label(),
                calibration: t.calibration(),
                theta: grid.point(a).to_vec(),
                n_reps,
                n_ok: ok,
                rejections: rej,
                rate,
                se: rate_se(rate, ok),
            });
        }
    }
    Ok(out)
}

fn clone_error(e: &Error) -> Error {
    match e {
        Error::Singular { index, reason } => Error::Singular {
            index: *index,
            reason: reason.clone(),
        },
        Error::NoConvergence {
            iterations,
            objective,
            best,
        } => Error::NoConvergence {
            iterations: *iterations,
            objective: *objective,
            best: best.clone(),
        },
        other => Error::Invalid(other.to_string()),
    }
}

/// Rejection rates at the true null of the scenario's grid.
pub fn size_experiment(
    scenario: &dyn Scenario,
    testers: &[&dyn Tester],
    n_reps: usize,
    seed: u64,
) -> Result<ExperimentOutput> {
    power_curve(scenario, testers, &[scenario.grid().null_index()], n_reps, seed)
}

/// Kolmogorov-Smirnov distance between a sample and a continuous CDF.
pub fn ks_distance(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut x = sample.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    x.iter()
        .enumerate()
        .map(|(i, v)| {
            let f = cdf(*v);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Asymptotic one-sample KS critical value `sqrt(-ln(level / 2) / 2) / sqrt(n)`.
pub fn ks_critical(n: usize, level: f64) -> f64 {
    (-(level / 2.0).ln() / 2.0).sqrt() / (n as f64).sqrt()
}

/// Distribution diagnostics under strong identification.
#[derive(Debug, Clone, serde::Serialize)]
pub struct StrongIdReport {
    pub q: usize,
    pub scale: f64,
    pub alpha: f64,
    pub qlr: Vec<f64>,
    pub critical_values: Vec<f64>,
    pub ks_distance: f64,
    pub ks_critical_1pct: f64,
    pub chi2_quantile: f64,
    pub mean_critical_value: f64,
    pub sd_critical_value: f64,
    pub rejection_rate: f64,
}

impl StrongIdReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "rep,qlr,critical_value")?;
        for (i, (s, c)) in self.qlr.iter().zip(&self.critical_values).enumerate() {
            writeln!(w, "{i},{s},{c}")?;
        }
        Ok(())
    }
}

/// QLR statistics and conditional critical values over replications of a
/// strongly identified design, compared with `chi2(q)`.
pub fn strong_id_experiment(
    design: &StrongIdDesign,
    alpha: f64,
    n_reps: usize,
    n_draws: usize,
    seed: u64,
) -> Result<StrongIdReport> {
    let limit = design.limit_design()?;
    let k = limit.k();
    let q = design.grid.q();
    let results: Vec<Result<(f64, f64)>> = (0..n_reps)
        .into_par_iter()
        .map(|rep| {
            let mut data_rng = stream_rng(seed, 2 * rep as u64);
            let mut draw_rng = stream_rng(seed, 2 * rep as u64 + 1);
            let g = gen_limit_draw(&limit, &mut data_rng)?;
            let h = compute_h(&g, &limit.field)?;
            let stat = Qlr.evaluate(g.null_value(), &h, &limit.field)?;
            let draws = StandardDraws::generate(&mut draw_rng, n_draws, k);
            let cv = conditional_critical_value_with(&Qlr, &h, &limit.field, alpha, &draws)?;
            Ok((stat, cv.value))
        })
        .collect();
    let mut qlr = Vec::with_capacity(n_reps);
    let mut cvs = Vec::with_capacity(n_reps);
    for r in results {
        let (s, c) = r?;
        qlr.push(s);
        cvs.push(c);
    }
    let chi = ChiSquared::new(q as f64).expect("positive degrees of freedom");
    let n = n_reps as f64;
    let mean = cvs.iter().sum::<f64>() / n;
    let sd = (cvs.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    let rejections = qlr.iter().zip(&cvs).filter(|(s, c)| s > c).count();
    Ok(StrongIdReport {
        q,
        scale: design.scale,
        alpha,
        ks_distance: ks_distance(&qlr, |x| chi.cdf(x.max(0.0))),
        ks_critical_1pct: ks_critical(n_reps, 0.01),
        chi2_quantile: chi2_quantile(q, alpha),
        mean_critical_value: mean,
        sd_critical_value: sd,
        rejection_rate: rejections as f64 / n,
        qlr,
        critical_values: cvs,
    })
}
