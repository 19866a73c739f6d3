//! Instrumental-variables quantile regression with the exogenous coefficients
//! profiled out.
//!
//! At each grid value of the endogenous coefficients `theta`, `beta_hat(theta)`
//! is the linear quantile regression of `Y - D theta` on the controls `C`. The
//! concentrated moments are `(1/sqrt(T)) sum_t (tau - 1{eps_t <= 0}) Z_t` and the
//! covariance field uses kernel estimates of the density-weighted Jacobians.

pub mod qreg;

use std::io::Read;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::RngCore;
use rayon::prelude::*;

use crate::concentrate::{LongCovarianceField, LongMomentModel, ProfilePath};
use crate::condcrit::FixedSupplier;
use crate::error::{Error, Result};
use crate::field::CovarianceField;
use crate::grid::ParamGrid;
use crate::inference::{self, TestSpec};
use crate::linalg;
use crate::process::MomentProcess;
use crate::result::{ConfidenceSet, TestResult};

pub use qreg::{check_loss, SolverOptions};

/// Outcome, endogenous regressors, controls, instruments and the quantile.
#[derive(Debug, Clone)]
pub struct QuantileIVData {
    y: Vec<f64>,
    d: DMatrix<f64>,
    c: DMatrix<f64>,
    z: DMatrix<f64>,
    tau: f64,
}

impl QuantileIVData {
    /// Validates shapes, finiteness, `tau` and the rank of `(C, Z)' (C, Z)`.
    pub fn new(
        y: Vec<f64>,
        d: DMatrix<f64>,
        c: DMatrix<f64>,
        z: DMatrix<f64>,
        tau: f64,
    ) -> Result<Self> {
        let n = y.len();
        if d.nrows() != n || c.nrows() != n || z.nrows() != n {
            return Err(Error::Dimension(format!(
                "row counts differ: y {n}, D {}, C {}, Z {}",
                d.nrows(),
                c.nrows(),
                z.nrows()
            )));
        }
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::Invalid(format!("tau must lie in (0,1), got {tau}")));
        }
        if z.ncols() == 0 {
            return Err(Error::Invalid("at least one instrument is required".into()));
        }
        if d.ncols() == 0 {
            return Err(Error::Invalid("at least one endogenous regressor is required".into()));
        }
        let finite = |m: &DMatrix<f64>| m.iter().all(|v| v.is_finite());
        if !y.iter().all(|v| v.is_finite()) || !finite(&d) || !finite(&c) || !finite(&z) {
            return Err(Error::NonFinite("quantile IV data".into()));
        }
        let cz = {
            let mut m = DMatrix::zeros(n, c.ncols() + z.ncols());
            m.columns_mut(0, c.ncols()).copy_from(&c);
            m.columns_mut(c.ncols(), z.ncols()).copy_from(&z);
            m
        };
        let gram = cz.tr_mul(&cz) / n.max(1) as f64;
        let (lo, hi) = linalg::eig_range(&gram);
        if n < cz.ncols() || !(hi > 0.0) || lo <= 1e-12 * hi {
            return Err(Error::Invalid(
                "the stacked (C, Z) cross-product matrix is rank deficient".into(),
            ));
        }
        Ok(Self { y, d, c, z, tau })
    }

    /// Reads a CSV with columns `y`, `d1..`, `c1..`, `z1..`. Lines starting with
    /// `#` are ignored. Without any `c` column a constant control is added.
    pub fn from_csv<R: Read>(reader: R, tau: f64) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        let mut ycol = None;
        let mut groups: [Vec<(usize, usize)>; 3] = Default::default();
        for (pos, name) in headers.iter().enumerate() {
            let lower = name.to_ascii_lowercase();
            if lower == "y" {
                ycol = Some(pos);
                continue;
            }
            let (head, tail) = lower.split_at(1.min(lower.len()));
            let slot = match head {
                "d" => 0,
                "c" => 1,
                "z" => 2,
                _ => return Err(Error::Invalid(format!("unexpected column '{name}'"))),
            };
            let idx = usize::from_str(tail)
                .map_err(|_| Error::Invalid(format!("unexpected column '{name}'")))?;
            groups[slot].push((idx, pos));
        }
        let ycol = ycol.ok_or_else(|| Error::Invalid("missing column 'y'".into()))?;
        for g in groups.iter_mut() {
            g.sort();
        }
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|s| {
                    s.parse::<f64>().map_err(|_| {
                        Error::Invalid(format!("row {}: cannot parse '{s}'", line + 1))
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        let n = rows.len();
        let take = |cols: &[(usize, usize)]| {
            DMatrix::from_fn(n, cols.len(), |t, j| rows[t][cols[j].1])
        };
        let y = rows.iter().map(|r| r[ycol]).collect();
        let d = take(&groups[0]);
        let c = if groups[1].is_empty() {
            DMatrix::from_element(n, 1, 1.0)
        } else {
            take(&groups[1])
        };
        let z = take(&groups[2]);
        Self::new(y, d, c, z, tau)
    }

    pub fn t(&self) -> usize {
        self.y.len()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Number of instruments.
    pub fn k(&self) -> usize {
        self.z.ncols()
    }

    /// Number of controls.
    pub fn p(&self) -> usize {
        self.c.ncols()
    }

    /// Number of endogenous regressors.
    pub fn q(&self) -> usize {
        self.d.ncols()
    }

    /// `Y_t - D_t' theta`.
    pub fn partial_residuals(&self, theta: &[f64]) -> Vec<f64> {
        (0..self.t())
            .map(|t| {
                let mut r = self.y[t];
                for (j, th) in theta.iter().enumerate() {
                    r -= self.d[(t, j)] * th;
                }
                r
            })
            .collect()
    }

    /// `eps_t(beta, theta) = Y_t - D_t' theta - C_t' beta`.
    pub fn residuals(&self, theta: &[f64], beta: &[f64]) -> Vec<f64> {
        let mut r = self.partial_residuals(theta);
        for (t, v) in r.iter_mut().enumerate() {
            for (j, b) in beta.iter().enumerate() {
                *v -= self.c[(t, j)] * b;
            }
        }
        r
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.q() {
            return Err(Error::Dimension(format!(
                "theta has length {}, data has {} endogenous regressors",
                theta.len(),
                self.q()
            )));
        }
        Ok(())
    }
}

/// `beta_hat(theta)`: a minimizer of `(1/T) sum_t rho_tau(Y_t - D_t' theta - C_t' beta)`.
pub fn fit_beta(data: &QuantileIVData, theta: &[f64]) -> Result<Vec<f64>> {
    fit_beta_with(data, theta, &SolverOptions::default())
}

pub fn fit_beta_with(
    data: &QuantileIVData,
    theta: &[f64],
    opts: &SolverOptions,
) -> Result<Vec<f64>> {
    data.check_theta(theta)?;
    qreg::fit(&data.partial_residuals(theta), &data.c, data.tau, opts)
}

/// Quantile-regression objective at `(beta, theta)`.
pub fn qr_objective(data: &QuantileIVData, theta: &[f64], beta: &[f64]) -> f64 {
    qreg::objective(&data.partial_residuals(theta), &data.c, beta, data.tau)
}

/// Smoothing kernels integrating to one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kernel {
    Gaussian,
    /// Density 1 on `[-1/2, 1/2]`.
    Uniform,
    /// `3/4 (1 - v^2)` on `[-1, 1]`.
    Epanechnikov,
}

impl Kernel {
    pub fn eval(self, v: f64) -> f64 {
        match self {
            Kernel::Gaussian => (-0.5 * v * v).exp() / (2.0 * std::f64::consts::PI).sqrt(),
            Kernel::Uniform => {
                if v.abs() <= 0.5 {
                    1.0
                } else {
                    0.0
                }
            }
            Kernel::Epanechnikov => {
                if v.abs() <= 1.0 {
                    0.75 * (1.0 - v * v)
                } else {
                    0.0
                }
            }
        }
    }
}

impl FromStr for Kernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" => Ok(Kernel::Gaussian),
            "uniform" => Ok(Kernel::Uniform),
            "epanechnikov" => Ok(Kernel::Epanechnikov),
            other => Err(Error::Invalid(format!("unknown kernel '{other}'"))),
        }
    }
}

/// A kernel with a bandwidth in residual units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub kernel: Kernel,
    pub bandwidth: f64,
}

impl KernelSpec {
    pub fn new(kernel: Kernel, bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::Invalid(format!("bandwidth must be positive, got {bandwidth}")));
        }
        Ok(Self { kernel, bandwidth })
    }
}

/// Bandwidth rule used along a profile.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Bandwidth {
    /// `1.06 sd(eps_hat(theta)) T^{-1/5}` at every grid point.
    Silverman,
    Fixed(f64),
}

/// `1.06 sd(eps) T^{-1/5}`.
pub fn silverman_bandwidth(residuals: &[f64]) -> f64 {
    let n = residuals.len() as f64;
    let mean = residuals.iter().sum::<f64>() / n;
    let var = residuals.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    1.06 * var.sqrt() * n.powf(-0.2)
}

/// `M_hat = (1/(T h)) sum_t Z_t C_t' k(eps_t / h)` (`k x p`) and
/// `J_hat = (1/(T h)) sum_t C_t C_t' k(eps_t / h)` (`p x p`).
pub fn kernel_jacobians(
    data: &QuantileIVData,
    theta: &[f64],
    beta: &[f64],
    spec: &KernelSpec,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    data.check_theta(theta)?;
    if beta.len() != data.p() {
        return Err(Error::Dimension(format!(
            "beta has length {}, data has {} controls",
            beta.len(),
            data.p()
        )));
    }
    if !(spec.bandwidth > 0.0) {
        return Err(Error::Invalid(format!(
            "bandwidth must be positive, got {}",
            spec.bandwidth
        )));
    }
    Ok(jacobians_from_residuals(data, &data.residuals(theta, beta), spec))
}

fn jacobians_from_residuals(
    data: &QuantileIVData,
    eps: &[f64],
    spec: &KernelSpec,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = data.t();
    let scale = 1.0 / (n as f64 * spec.bandwidth);
    let w: Vec<f64> = eps
        .iter()
        .map(|e| spec.kernel.eval(e / spec.bandwidth) * scale)
        .collect();
    let wc = DMatrix::from_fn(n, data.p(), |t, j| w[t] * data.c[(t, j)]);
    (data.z.tr_mul(&wc), data.c.tr_mul(&wc))
}

/// Options for profiling along a grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QivOptions {
    pub kernel: Kernel,
    pub bandwidth: Bandwidth,
    pub solver: SolverOptions,
}

impl Default for QivOptions {
    fn default() -> Self {
        Self {
            kernel: Kernel::Gaussian,
            bandwidth: Bandwidth::Silverman,
            solver: SolverOptions::default(),
        }
    }
}

/// Profile fit over a grid. `path.m_hats` holds `-M_hat`, the
/// `beta`-Jacobian of the long mean function.
#[derive(Debug, Clone)]
pub struct QivProfile {
    pub path: ProfilePath,
    /// Kernel estimates `M_hat(theta_i)`.
    pub m_kernel: Vec<DMatrix<f64>>,
    pub j_hats: Vec<DMatrix<f64>>,
    pub bandwidths: Vec<f64>,
    residuals: Vec<Vec<f64>>,
}

impl QivProfile {
    /// `eps_t(beta_hat(theta_i), theta_i)`.
    pub fn residuals(&self, i: usize) -> &[f64] {
        &self.residuals[i]
    }

    pub fn grid(&self) -> &Arc<ParamGrid> {
        &self.path.grid
    }
}

/// Fits `beta_hat`, the kernel Jacobians and the bandwidth at every grid point.
pub fn fit_profile(
    data: &QuantileIVData,
    grid: Arc<ParamGrid>,
    opts: &QivOptions,
) -> Result<QivProfile> {
    if grid.q() != data.q() {
        return Err(Error::Dimension(format!(
            "grid has q = {}, data has {} endogenous regressors",
            grid.q(),
            data.q()
        )));
    }
    let fits: Vec<Result<_>> = grid
        .points()
        .par_iter()
        .map(|theta| {
            let beta = fit_beta_with(data, theta, &opts.solver)?;
            let eps = data.residuals(theta, &beta);
            let h = match opts.bandwidth {
                Bandwidth::Silverman => silverman_bandwidth(&eps),
                Bandwidth::Fixed(h) => h,
            };
            let spec = KernelSpec::new(opts.kernel, h)?;
            let (m, j) = jacobians_from_residuals(data, &eps, &spec);
            Ok((beta, eps, h, m, j))
        })
        .collect();
    let n = grid.len();
    let mut betas = Vec::with_capacity(n);
    let mut residuals = Vec::with_capacity(n);
    let mut bandwidths = Vec::with_capacity(n);
    let mut m_kernel = Vec::with_capacity(n);
    let mut j_hats = Vec::with_capacity(n);
    for f in fits {
        let (b, e, h, m, j) = f?;
        betas.push(b);
        residuals.push(e);
        bandwidths.push(h);
        m_kernel.push(m);
        j_hats.push(j);
    }
    let neg: Vec<DMatrix<f64>> = m_kernel.iter().map(|m| -m).collect();
    Ok(QivProfile {
        path: ProfilePath::new(grid, betas, neg)?,
        m_kernel,
        j_hats,
        bandwidths,
        residuals,
    })
}

/// `g(theta_i) = (1/sqrt(T)) sum_t (tau - 1{eps_t <= 0}) Z_t` with
/// `eps_t = Y_t - D_t' theta_i - C_t' beta_hat(theta_i)`.
pub fn concentrated_g(data: &QuantileIVData, path: &ProfilePath) -> Result<MomentProcess> {
    let grid = &path.grid;
    if grid.q() != data.q() || path.p() != data.p() {
        return Err(Error::Dimension("profile path does not match the data".into()));
    }
    let n = data.t();
    let k = data.k();
    let scale = 1.0 / (n as f64).sqrt();
    let mut values = vec![0.0; grid.len() * k];
    for (i, theta) in grid.points().iter().enumerate() {
        let eps = data.residuals(theta, &path.betas[i]);
        let out = &mut values[i * k..(i + 1) * k];
        for (t, e) in eps.iter().enumerate() {
            let a = data.tau - if *e <= 0.0 { 1.0 } else { 0.0 };
            for (r, o) in out.iter_mut().enumerate() {
                *o += a * data.z[(t, r)];
            }
        }
        for o in out.iter_mut() {
            *o *= scale;
        }
    }
    MomentProcess::new(grid.clone(), values, k, n)
}

fn a_hats(profile: &QivProfile) -> Result<Vec<DMatrix<f64>>> {
    profile
        .j_hats
        .iter()
        .zip(&profile.m_kernel)
        .enumerate()
        .map(|(i, (j, m))| {
            // A = M J^{-1}, i.e. A' = J^{-1} M' with J symmetric.
            let sol = linalg::solve_spd(j, &m.transpose()).map_err(|e| Error::Singular {
                index: i,
                reason: format!("J_hat at grid point {i} is not invertible: {e}"),
            })?;
            Ok(sol.x.transpose())
        })
        .collect()
}

fn sign_weights(eps: &[f64], tau: f64) -> Vec<f64> {
    eps.iter()
        .map(|e| tau - if *e < 0.0 { 1.0 } else { 0.0 })
        .collect()
}

/// `Sigma(theta_i, theta_j) = (1/T) sum_t a_t(i) a_t(j) (Z_t - A_i C_t)(Z_t - A_j C_t)'`
/// with `a_t(i) = tau - 1{eps_t(theta_i) < 0}` and `A = M_hat J_hat^{-1}`.
pub fn qiv_covariance(data: &QuantileIVData, profile: &QivProfile) -> Result<CovarianceField> {
    let grid = profile.grid();
    let (n, k) = (data.t(), data.k());
    let a = a_hats(profile)?;
    let mut w = DMatrix::zeros(n, grid.len() * k);
    for i in 0..grid.len() {
        let s = sign_weights(&profile.residuals[i], data.tau);
        let resid = &data.z - &data.c * a[i].transpose();
        for r in 0..k {
            let col = i * k + r;
            for t in 0..n {
                w[(t, col)] = s[t] * resid[(t, r)];
            }
        }
    }
    let assembled = w.tr_mul(&w) / n as f64;
    CovarianceField::from_assembled(grid.clone(), k, assembled)
}

/// Joint covariance of `a_t(i) Z_t` and the estimator influence
/// `J_hat^{-1} a_t(i) C_t`, for use with the generic concentration sandwich.
pub fn qiv_long_field(data: &QuantileIVData, profile: &QivProfile) -> Result<LongCovarianceField> {
    let grid = profile.grid();
    let (n, k, p) = (data.t(), data.k(), data.p());
    let kp = k + p;
    let mut w = DMatrix::zeros(n, grid.len() * kp);
    for i in 0..grid.len() {
        let s = sign_weights(&profile.residuals[i], data.tau);
        let jinv = linalg::spd_inverse(&profile.j_hats[i])
            .map_err(|e| Error::Singular {
                index: i,
                reason: format!("J_hat at grid point {i} is not invertible: {e}"),
            })?
            .x;
        let infl = &data.c * jinv;
        for t in 0..n {
            for r in 0..k {
                w[(t, i * kp + r)] = s[t] * data.z[(t, r)];
            }
            for r in 0..p {
                w[(t, i * kp + k + r)] = s[t] * infl[(t, r)];
            }
        }
    }
    let assembled = w.tr_mul(&w) / n as f64;
    LongCovarianceField::new(CovarianceField::from_assembled(grid.clone(), kp, assembled)?, k, p)
}

/// The long quantile-IV moment `phi_L(t, beta, theta) = (tau - 1{eps_t <= 0}) Z_t`.
pub struct QuantileLongModel<'a> {
    pub data: &'a QuantileIVData,
}

impl LongMomentModel for QuantileLongModel<'_> {
    fn k(&self) -> usize {
        self.data.k()
    }
    fn p(&self) -> usize {
        self.data.p()
    }
    fn q(&self) -> usize {
        self.data.q()
    }
    fn t(&self) -> usize {
        self.data.t()
    }
    fn phi(&self, t: usize, beta: &[f64], theta: &[f64]) -> Result<Vec<f64>> {
        let d = self.data;
        let mut e = d.y[t];
        for (j, th) in theta.iter().enumerate() {
            e -= d.d[(t, j)] * th;
        }
        for (j, b) in beta.iter().enumerate() {
            e -= d.c[(t, j)] * b;
        }
        let a = d.tau - if e <= 0.0 { 1.0 } else { 0.0 };
        Ok((0..d.k()).map(|r| a * d.z[(t, r)]).collect())
    }
}

/// Fitted concentrated process and covariance field over a grid.
#[derive(Debug, Clone)]
pub struct QivFit {
    pub profile: QivProfile,
    pub g: MomentProcess,
    pub field: Arc<CovarianceField>,
}

/// Fits the profile and builds `g` and the covariance field.
pub fn qiv_fit(data: &QuantileIVData, grid: Arc<ParamGrid>, opts: &QivOptions) -> Result<QivFit> {
    let profile = fit_profile(data, grid, opts)?;
    let g = concentrated_g(data, &profile.path)?;
    let field = Arc::new(qiv_covariance(data, &profile)?);
    Ok(QivFit { profile, g, field })
}

/// Tests `H0: theta = theta_0` at the null of `grid`.
pub fn qiv_test<R: RngCore + ?Sized>(
    data: &QuantileIVData,
    grid: Arc<ParamGrid>,
    opts: &QivOptions,
    spec: &TestSpec,
    rng: &mut R,
) -> Result<TestResult> {
    let fit = qiv_fit(data, grid, opts)?;
    let draws = inference::draws_for(spec, data.k(), rng);
    inference::run_test(&fit.g, &fit.field, spec, &draws)
}

/// Confidence set for `theta` by inverting the test over every grid point.
pub fn qiv_confset<R: RngCore + ?Sized>(
    data: &QuantileIVData,
    grid: Arc<ParamGrid>,
    opts: &QivOptions,
    spec: &TestSpec,
    rng: &mut R,
) -> Result<ConfidenceSet> {
    let fit = qiv_fit(data, grid, opts)?;
    let supplier = FixedSupplier {
        g: &fit.g,
        field: fit.field.clone(),
    };
    inference::confidence_set(&supplier, spec, true, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn grid1(points: &[f64], null: usize) -> Arc<ParamGrid> {
        Arc::new(ParamGrid::new(points.iter().map(|p| vec![*p]).collect(), null).unwrap())
    }

    #[test]
    fn uniform_kernel_at_zero_residuals() {
        let c = DMatrix::from_element(3, 1, 1.0);
        let z = dmatrix![1.0; 2.0; 4.0];
        let d = dmatrix![0.0; 0.0; 0.0];
        let data = QuantileIVData::new(vec![1.0, 1.0, 1.0], d, c, z, 0.5).unwrap();
        let spec = KernelSpec::new(Kernel::Uniform, 1.0).unwrap();
        let (m, j) = kernel_jacobians(&data, &[0.0], &[1.0], &spec).unwrap();
        assert!((m[(0, 0)] - 7.0 / 3.0).abs() < 1e-15);
        assert!((j[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn kernel_outside_support_is_zero() {
        let c = DMatrix::from_element(3, 1, 1.0);
        let z = dmatrix![1.0; 2.0; 4.0];
        let d = dmatrix![0.0; 0.0; 0.0];
        let data = QuantileIVData::new(vec![5.0, -5.0, 9.0], d, c, z, 0.5).unwrap();
        let spec = KernelSpec::new(Kernel::Epanechnikov, 1.0).unwrap();
        let (m, j) = kernel_jacobians(&data, &[0.0], &[0.0], &spec).unwrap();
        assert_eq!(m.amax(), 0.0);
        assert_eq!(j.amax(), 0.0);
    }

    #[test]
    fn saturated_indicator() {
        let n = 4;
        let c = DMatrix::from_element(n, 1, 1.0);
        let z = dmatrix![1.0; 2.0; 3.0; 6.0];
        let d = DMatrix::zeros(n, 1);
        let data = QuantileIVData::new(vec![1e9; 4], d, c, z, 0.3).unwrap();
        let grid = grid1(&[0.0], 0);
        let path = ProfilePath::new(grid, vec![vec![0.0]], vec![DMatrix::zeros(1, 1)]).unwrap();
        let g = concentrated_g(&data, &path).unwrap();
        assert!((g.value(0)[0] - 2.0 * 0.3 * 3.0).abs() < 1e-12);
    }

    #[test]
    fn csv_round_trip() {
        let text = "y,d1,z1,z2\n1,0.5,1,0\n2,0.1,0,1\n3,0.7,1,1\n0,0.2,2,1\n";
        let data = QuantileIVData::from_csv(text.as_bytes(), 0.5).unwrap();
        assert_eq!((data.t(), data.q(), data.p(), data.k()), (4, 1, 1, 2));
        assert_eq!(data.c()[(2, 0)], 1.0);
    }

    #[test]
    fn rank_deficient_instruments_rejected() {
        let c = DMatrix::from_element(3, 1, 1.0);
        let z = DMatrix::from_element(3, 1, 2.0);
        let d = DMatrix::zeros(3, 1);
        assert!(QuantileIVData::new(vec![0.0; 3], d, c, z, 0.5).is_err());
    }
}
