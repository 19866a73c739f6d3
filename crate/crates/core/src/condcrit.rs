//! Conditional critical values.
//!
//! Given the observed process `g` and a covariance field, the conditioning
//! process `h(theta) = g(theta) - V(theta) g(theta_0)` with
//! `V(theta) = Sigma(theta, theta_0) Sigma(theta_0, theta_0)^{-1}` carries all
//! information about the unknown mean function under the null. Draws
//! `xi* ~ N(0, Sigma(theta_0, theta_0))` rebuild `g* = h + V xi*`, and the
//! empirical `1 - alpha` quantile of `R(g*)` is the critical value for `R(g)`.
//!
//! Statistics are evaluated through [`StatisticFunctional`], which sees the
//! null value `xi`, the whole [`HProcess`] and the field, so statistics that
//! depend on the full path of the process are supported.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::CovarianceField;
use crate::grid::ParamGrid;
use crate::linalg;
use crate::process::MomentProcess;
use crate::result::{ConfidenceSet, TestResult};

/// The conditioning process `h(theta_i)` and projection coefficients `V(theta_i)`.
#[derive(Debug, Clone)]
pub struct HProcess {
    grid: Arc<ParamGrid>,
    values: Vec<f64>,
    v_coeffs: Vec<DMatrix<f64>>,
    k: usize,
    ridged: bool,
}

impl HProcess {
    pub fn grid(&self) -> &Arc<ParamGrid> {
        &self.grid
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn null_index(&self) -> usize {
        self.grid.null_index()
    }

    pub fn value(&self, i: usize) -> &[f64] {
        &self.values[i * self.k..(i + 1) * self.k]
    }

    pub fn v(&self, i: usize) -> &DMatrix<f64> {
        &self.v_coeffs[i]
    }

    /// `Sigma(theta_0, theta_0)` needed the ridge when `V` was formed.
    pub fn ridged(&self) -> bool {
        self.ridged
    }

    /// `V(theta_i) xi + h(theta_i)` written into `out`.
    #[inline]
    pub fn propagate_into(&self, i: usize, xi: &[f64], out: &mut [f64]) {
        let v = &self.v_coeffs[i];
        let h = self.value(i);
        for r in 0..self.k {
            let mut acc = h[r];
            for c in 0..self.k {
                acc += v[(r, c)] * xi[c];
            }
            out[r] = acc;
        }
    }
}

fn same_points(a: &ParamGrid, b: &ParamGrid) -> bool {
    std::ptr::eq(a, b) || a.points() == b.points()
}

fn check_shared(g: &MomentProcess, field: &CovarianceField) -> Result<()> {
    if !same_points(g.grid(), field.grid()) {
        return Err(Error::Dimension(
            "moment process and covariance field live on different grids".into(),
        ));
    }
    if g.k() != field.k() {
        return Err(Error::Dimension(format!(
            "moment dimension {} does not match field block size {}",
            g.k(),
            field.k()
        )));
    }
    Ok(())
}

/// `h(theta_i) = g(theta_i) - Sigma(theta_i, theta_0) Sigma(theta_0, theta_0)^{-1} g(theta_0)`.
///
/// The null is taken from `g`'s grid, so one field can serve every candidate
/// null on the same points. `V(theta_0)` is set to the identity and
/// `h(theta_0)` to zero exactly.
pub fn compute_h(g: &MomentProcess, field: &CovarianceField) -> Result<HProcess> {
    check_shared(g, field)?;
    let k = g.k();
    let n = g.grid().len();
    let null = g.grid().null_index();
    let s00 = field.block(null, null);
    // One factorization: X = Sigma00^{-1} [Sigma(theta_0, theta_i)]_i, V_i = X_i'.
    let rhs = field.assembled().view((null * k, 0), (k, n * k)).into_owned();
    let sol = linalg::solve_spd(&s00, &rhs)
        .map_err(|e| Error::Singular { index: null, reason: e.to_string() })?;
    let g0 = g.null_value().to_vec();
    let mut values = vec![0.0; n * k];
    let mut v_coeffs = Vec::with_capacity(n);
    for i in 0..n {
        let v = if i == null {
            DMatrix::identity(k, k)
        } else {
            sol.x.view((0, i * k), (k, k)).transpose()
        };
        if i != null {
            let gi = g.value(i);
            for r in 0..k {
                let mut acc = 0.0;
                for c in 0..k {
                    acc += v[(r, c)] * g0[c];
                }
                values[i * k + r] = gi[r] - acc;
            }
        }
        v_coeffs.push(v);
    }
    Ok(HProcess {
        grid: g.grid().clone(),
        values,
        v_coeffs,
        k,
        ridged: sol.ridged,
    })
}

/// `g*(theta_i) = h(theta_i) + V(theta_i) xi*`; equals `xi*` at the null.
pub fn simulate_g_star(h: &HProcess, xi_star: &[f64]) -> Result<MomentProcess> {
    if xi_star.len() != h.k {
        return Err(Error::Dimension(format!(
            "xi* has length {}, expected {}",
            xi_star.len(),
            h.k
        )));
    }
    let mut values = vec![0.0; h.len() * h.k];
    for i in 0..h.len() {
        h.propagate_into(i, xi_star, &mut values[i * h.k..(i + 1) * h.k]);
    }
    MomentProcess::new(h.grid.clone(), values, h.k, 0)
}

/// Root of `Sigma(theta_0, theta_0)` used to turn standard normals into `xi*` draws.
#[derive(Debug, Clone)]
pub struct XiSampler {
    root: DMatrix<f64>,
}

impl XiSampler {
    pub fn new(field: &CovarianceField, null_index: usize) -> Result<Self> {
        let root = linalg::psd_root(&field.block(null_index, null_index))?;
        Ok(Self { root })
    }

    pub fn k(&self) -> usize {
        self.root.nrows()
    }

    /// `L z` for a standard normal `z`.
    pub fn transform(&self, z: &[f64]) -> Vec<f64> {
        let k = self.k();
        (0..k)
            .map(|r| (0..k).map(|c| self.root[(r, c)] * z[c]).sum())
            .collect()
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z: Vec<f64> = (0..self.k()).map(|_| rng.sample(StandardNormal)).collect();
        self.transform(&z)
    }
}

/// One draw `xi* ~ N(0, Sigma(theta_0, theta_0))` for the field's null point.
pub fn draw_xi<R: Rng + ?Sized>(field: &CovarianceField, rng: &mut R) -> Result<DVector<f64>> {
    let s = XiSampler::new(field, field.grid().null_index())?;
    Ok(DVector::from_vec(s.draw(rng)))
}

/// A block of standard normal vectors, shared across statistics or candidate
/// nulls when common random numbers are wanted.
#[derive(Debug, Clone)]
pub struct StandardDraws {
    k: usize,
    z: Vec<f64>,
}

impl StandardDraws {
    /// `n` draws of length `k`, taken sequentially from `rng`.
    pub fn generate<R: Rng + ?Sized>(rng: &mut R, n: usize, k: usize) -> Self {
        let z = (0..n * k).map(|_| rng.sample(StandardNormal)).collect();
        Self { k, z }
    }

    pub fn len(&self) -> usize {
        self.z.len().checked_div(self.k).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, b: usize) -> &[f64] {
        &self.z[b * self.k..(b + 1) * self.k]
    }

    /// The first `n` draws.
    pub fn prefix(&self, n: usize) -> StandardDraws {
        let n = n.min(self.len());
        Self {
            k: self.k,
            z: self.z[..n * self.k].to_vec(),
        }
    }
}

/// A test statistic `R(xi, h, Sigma)`.
///
/// Implementations must be deterministic. For the conditional test to be
/// valid the statistic should be bounded and Lipschitz in `xi`, `h` and
/// `Sigma` on sets `{xi : xi' Sigma00^{-1} xi <= C}`; this is not checked.
pub trait StatisticFunctional: Sync {
    fn name(&self) -> &str;

    fn evaluate(&self, xi: &[f64], h: &HProcess, field: &CovarianceField) -> Result<f64>;
}

/// Adapts a closure into a [`StatisticFunctional`].
pub struct FnStatistic<F> {
    name: String,
    f: F,
}

impl<F> FnStatistic<F>
where
    F: Fn(&[f64], &HProcess, &CovarianceField) -> Result<f64> + Sync,
{
    pub fn new(name: impl Into<String>, f: F) -> Self {
        Self {
            name: name.into(),
            f,
        }
    }
}

impl<F> StatisticFunctional for FnStatistic<F>
where
    F: Fn(&[f64], &HProcess, &CovarianceField) -> Result<f64> + Sync,
{
    fn name(&self) -> &str {
        &self.name
    }

    fn evaluate(&self, xi: &[f64], h: &HProcess, field: &CovarianceField) -> Result<f64> {
        (self.f)(xi, h, field)
    }
}

/// Simulated conditional null distribution and its `1 - alpha` quantile.
#[derive(Debug, Clone)]
pub struct CriticalValueResult {
    pub value: f64,
    /// Simulated statistics, ascending.
    pub draws: Vec<f64>,
    /// Zero-based position of `value` in `draws`.
    pub quantile_rank: usize,
}

impl CriticalValueResult {
    /// Critical value at another level from the same draws.
    pub fn at_level(&self, alpha: f64) -> f64 {
        self.draws[quantile_index(alpha, self.draws.len())]
    }
}

/// Zero-based index of the order statistic at rank `ceil((1 - alpha) B)`.
pub fn quantile_index(alpha: f64, n: usize) -> usize {
    let rank = ((1.0 - alpha) * n as f64 - 1e-9).ceil() as usize;
    rank.clamp(1, n) - 1
}

/// Minimum number of simulation draws accepted by the engine.
pub const MIN_DRAWS: usize = 100;

/// Level, number of draws and the optional critical-value inflation `epsilon`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestOptions {
    pub alpha: f64,
    pub n_draws: usize,
    /// Reject only when `R > c_alpha + epsilon`.
    pub epsilon: f64,
}

impl TestOptions {
    pub fn new(alpha: f64, n_draws: usize) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Invalid(format!("alpha must lie in (0,1), got {alpha}")));
        }
        if n_draws < MIN_DRAWS {
            return Err(Error::Invalid(format!(
                "n_draws must be at least {MIN_DRAWS}, got {n_draws}"
            )));
        }
        Ok(Self {
            alpha,
            n_draws,
            epsilon: 0.0,
        })
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }
}

/// Evaluates `stat` on `xi* = L z_b` for every supplied standard draw.
pub fn simulate_statistic(
    stat: &dyn StatisticFunctional,
    h: &HProcess,
    field: &CovarianceField,
    draws: &StandardDraws,
) -> Result<Vec<f64>> {
    if draws.k() != h.k() {
        return Err(Error::Dimension(format!(
            "standard draws have dimension {}, process has {}",
            draws.k(),
            h.k()
        )));
    }
    let sampler = XiSampler::new(field, h.null_index())?;
    (0..draws.len())
        .into_par_iter()
        .map(|b| {
            let xi = sampler.transform(draws.get(b));
            stat.evaluate(&xi, h, field)
        })
        .collect()
}

fn critical_value_from(mut sims: Vec<f64>, alpha: f64) -> Result<CriticalValueResult> {
    if sims.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("simulated statistic".into()));
    }
    sims.sort_by(f64::total_cmp);
    let idx = quantile_index(alpha, sims.len());
    Ok(CriticalValueResult {
        value: sims[idx],
        draws: sims,
        quantile_rank: idx,
    })
}

/// Critical value from pre-generated standard draws.
pub fn conditional_critical_value_with(
    stat: &dyn StatisticFunctional,
    h: &HProcess,
    field: &CovarianceField,
    alpha: f64,
    draws: &StandardDraws,
) -> Result<CriticalValueResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Invalid(format!("alpha must lie in (0,1), got {alpha}")));
    }
    if draws.len() < MIN_DRAWS {
        return Err(Error::Invalid(format!(
            "n_draws must be at least {MIN_DRAWS}, got {}",
            draws.len()
        )));
    }
    critical_value_from(simulate_statistic(stat, h, field, draws)?, alpha)
}

/// `c_alpha(h, Sigma)`: the order statistic at rank `ceil((1 - alpha) n_draws)`
/// of `stat(xi*_b, h, Sigma)` over `n_draws` simulated `xi*`.
pub fn conditional_critical_value<R: Rng + ?Sized>(
    stat: &dyn StatisticFunctional,
    h: &HProcess,
    field: &CovarianceField,
    alpha: f64,
    n_draws: usize,
    rng: &mut R,
) -> Result<CriticalValueResult> {
    let draws = StandardDraws::generate(rng, n_draws, h.k());
    conditional_critical_value_with(stat, h, field, alpha, &draws)
}

/// [`conditional_test`] with pre-generated standard draws.
pub fn conditional_test_with(
    g: &MomentProcess,
    field: &CovarianceField,
    stat: &dyn StatisticFunctional,
    opts: &TestOptions,
    draws: &StandardDraws,
) -> Result<TestResult> {
    let h = compute_h(g, field)?;
    conditional_test_given_h(g.null_value(), &h, field, stat, opts, draws)
}

/// Test from an already computed `h`, with `xi` the observed `g(theta_0)`.
pub fn conditional_test_given_h(
    xi: &[f64],
    h: &HProcess,
    field: &CovarianceField,
    stat: &dyn StatisticFunctional,
    opts: &TestOptions,
    draws: &StandardDraws,
) -> Result<TestResult> {
    let observed = stat.evaluate(xi, h, field)?;
    if observed.is_nan() {
        return Err(Error::NonFinite(format!("{} statistic", stat.name())));
    }
    let cv = conditional_critical_value_with(stat, h, field, opts.alpha, draws)?;
    let exceed = cv.draws.iter().filter(|r| **r >= observed).count();
    let p_value = (1 + exceed) as f64 / (cv.draws.len() + 1) as f64;
    let critical_value = cv.value + opts.epsilon;
    Ok(TestResult {
        statistic: observed,
        critical_value,
        p_value,
        reject: observed > critical_value,
        n_draws: cv.draws.len(),
        alpha: opts.alpha,
        degraded: h.ridged() || field.diag_ridged(h.null_index()),
    })
}

/// Tests `H0: m(theta_0) = 0` at the null of `g`'s grid.
///
/// Rejects when `R(g(theta_0), h, Sigma) > c_alpha + epsilon`; the p-value is
/// `(1 + #{R*_b >= R}) / (n_draws + 1)`.
pub fn conditional_test<R: Rng + ?Sized>(
    g: &MomentProcess,
    field: &CovarianceField,
    stat: &dyn StatisticFunctional,
    opts: &TestOptions,
    rng: &mut R,
) -> Result<TestResult> {
    let draws = StandardDraws::generate(rng, opts.n_draws, g.k());
    conditional_test_with(g, field, stat, opts, &draws)
}

/// Supplies the moment process and field for the candidate null `index`.
pub trait NullSupplier: Sync {
    fn grid(&self) -> &Arc<ParamGrid>;

    fn supply(&self, index: usize) -> Result<(MomentProcess, Arc<CovarianceField>)>;
}

/// Supplier for the common case where `g` and the field do not depend on the
/// null: only the null index moves.
pub struct FixedSupplier<'a> {
    pub g: &'a MomentProcess,
    pub field: Arc<CovarianceField>,
}

impl NullSupplier for FixedSupplier<'_> {
    fn grid(&self) -> &Arc<ParamGrid> {
        self.g.grid()
    }

    fn supply(&self, index: usize) -> Result<(MomentProcess, Arc<CovarianceField>)> {
        let grid = Arc::new(self.g.grid().with_null(index)?);
        Ok((self.g.regrid(grid)?, self.field.clone()))
    }
}

/// Options for [`invert_test`].
#[derive(Debug, Clone, Copy)]
pub struct InversionOptions {
    pub test: TestOptions,
    /// Reuse one block of standard draws for every candidate null.
    pub common_random_numbers: bool,
}

/// Test inversion: `accepted[i]` is true when the test with `theta_0 := theta_i`
/// does not reject. Candidates whose test fails numerically are excluded and
/// flagged in `failed`.
pub fn invert_test<R: RngCore + ?Sized>(
    supplier: &dyn NullSupplier,
    stat: &dyn StatisticFunctional,
    opts: &InversionOptions,
    rng: &mut R,
) -> ConfidenceSet {
    let grid = supplier.grid().clone();
    let n = grid.len();
    let k_hint = supplier.supply(grid.null_index()).map(|(g, _)| g.k());
    let shared = match (&k_hint, opts.common_random_numbers) {
        (Ok(k), true) => Some(StandardDraws::generate(rng, opts.test.n_draws, *k)),
        _ => None,
    };
    let seeds: Vec<u64> = if shared.is_none() {
        (0..n).map(|_| rng.next_u64()).collect()
    } else {
        Vec::new()
    };
    let outcomes: Vec<Result<TestResult>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let (g, field) = supplier.supply(i)?;
            match &shared {
                Some(d) => conditional_test_with(&g, &field, stat, &opts.test, d),
                None => {
                    let mut r = ChaCha8Rng::seed_from_u64(seeds[i]);
                    conditional_test(&g, &field, stat, &opts.test, &mut r)
                }
            }
        })
        .collect();
    let mut accepted = vec![false; n];
    let mut failed = vec![false; n];
    for (i, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(t) => accepted[i] = !t.reject,
            Err(_) => failed[i] = true,
        }
    }
    ConfidenceSet {
        grid,
        accepted,
        failed,
        level: 1.0 - opts.test.alpha,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn two_point(cross: f64) -> (MomentProcess, CovarianceField) {
        let grid = Arc::new(ParamGrid::new(vec![vec![0.0], vec![1.0]], 0).unwrap());
        let g = MomentProcess::new(grid.clone(), vec![2.0, 1.0], 1, 1).unwrap();
        let f = CovarianceField::from_assembled(grid, 1, dmatrix![1.0, cross; cross, 1.0]).unwrap();
        (g, f)
    }

    #[test]
    fn h_examples() {
        let (g, f) = two_point(0.0);
        let h = compute_h(&g, &f).unwrap();
        assert_eq!(h.value(0), &[0.0]);
        assert_eq!(h.value(1), &[1.0]);
        let (g, f) = two_point(0.5);
        let h = compute_h(&g, &f).unwrap();
        assert_eq!(h.value(0), &[0.0]);
        assert!((h.value(1)[0] - 0.0).abs() < 1e-15);
        assert!((h.v(1)[(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn g_star_examples() {
        let (g, f) = two_point(0.5);
        let h = compute_h(&g, &f).unwrap();
        let zero = simulate_g_star(&h, &[0.0]).unwrap();
        assert_eq!(zero.value(1), h.value(1));
        let back = simulate_g_star(&h, g.null_value()).unwrap();
        assert_eq!(back.values(), g.values());
        assert!(simulate_g_star(&h, &[0.0, 1.0]).is_err());
    }

    #[test]
    fn zero_covariance_gives_zero_xi() {
        let grid = Arc::new(ParamGrid::new(vec![vec![0.0]], 0).unwrap());
        let f = CovarianceField::from_assembled(grid, 2, DMatrix::zeros(2, 2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            assert!(draw_xi(&f, &mut rng).unwrap().iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn quantile_index_convention() {
        assert_eq!(quantile_index(0.05, 1000), 949);
        assert_eq!(quantile_index(0.05, 100), 94);
        assert_eq!(quantile_index(0.10, 1000), 899);
        assert_eq!(quantile_index(0.999, 100), 0);
    }

    #[test]
    fn options_validate() {
        assert!(TestOptions::new(1.5, 1000).is_err());
        assert!(TestOptions::new(0.0, 1000).is_err());
        assert!(TestOptions::new(0.05, 99).is_err());
        assert!(TestOptions::new(0.05, 100).is_ok());
    }
}
