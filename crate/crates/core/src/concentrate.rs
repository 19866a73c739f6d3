//! Concentrating out strongly identified nuisance parameters.
//!
//! With a profiled estimator `beta_hat(theta)` the concentrated process is
//! `g(theta) = g_L(beta_hat(theta), theta)` and its covariance is the sandwich
//! `(I_k, M(theta)) Sigma_L (I_k, M(theta_1))'`, where `Sigma_L` is the joint
//! covariance of the long moments and `sqrt(T)(beta_hat - beta)`, and `M` is the
//! `beta`-Jacobian of the long mean function. Computing `beta_hat` and `M` is
//! left to the application.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::field::CovarianceField;
use crate::grid::ParamGrid;
use crate::linalg;
use crate::process::MomentProcess;

/// A long moment model `phi_L(t, beta, theta)` with `k` moments, `p` nuisance
/// parameters and `q` parameters of interest over `T` observations.
pub trait LongMomentModel: Sync {
    fn k(&self) -> usize;
    fn p(&self) -> usize;
    fn q(&self) -> usize;
    fn t(&self) -> usize;
    fn phi(&self, t: usize, beta: &[f64], theta: &[f64]) -> Result<Vec<f64>>;
}

/// Profiled nuisance estimates and Jacobian estimates along the grid.
#[derive(Debug, Clone)]
pub struct ProfilePath {
    pub grid: Arc<ParamGrid>,
    pub betas: Vec<Vec<f64>>,
    /// `k x p` estimates of `M(theta_i)`.
    pub m_hats: Vec<DMatrix<f64>>,
}

impl ProfilePath {
    pub fn new(
        grid: Arc<ParamGrid>,
        betas: Vec<Vec<f64>>,
        m_hats: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        if betas.len() != grid.len() || m_hats.len() != grid.len() {
            return Err(Error::Dimension(format!(
                "profile path has {} betas and {} Jacobians for {} grid points",
                betas.len(),
                m_hats.len(),
                grid.len()
            )));
        }
        let p = betas[0].len();
        for (i, (b, m)) in betas.iter().zip(&m_hats).enumerate() {
            if b.len() != p || m.ncols() != p {
                return Err(Error::Dimension(format!(
                    "profile entry {i} does not have nuisance dimension {p}"
                )));
            }
            if b.iter().chain(m.iter()).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("profile entry {i}")));
            }
        }
        Ok(Self {
            grid,
            betas,
            m_hats,
        })
    }

    /// A path with no nuisance parameters.
    pub fn empty(grid: Arc<ParamGrid>, k: usize) -> Self {
        let n = grid.len();
        Self {
            grid,
            betas: vec![Vec::new(); n],
            m_hats: vec![DMatrix::zeros(k, 0); n],
        }
    }

    pub fn p(&self) -> usize {
        self.betas.first().map_or(0, Vec::len)
    }

    /// Errors unless every `beta_hat(theta_i)` lies strictly inside `[lo, hi]`.
    pub fn check_interior(&self, lo: &[f64], hi: &[f64]) -> Result<()> {
        for (i, b) in self.betas.iter().enumerate() {
            for (r, v) in b.iter().enumerate() {
                if !(*v > lo[r] && *v < hi[r]) {
                    return Err(Error::Invalid(format!(
                        "profiled nuisance {r} at grid point {i} is {v}, outside ({}, {})",
                        lo[r], hi[r]
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Joint covariance of the long moments and the nuisance estimator,
/// `(k+p) x (k+p)` blocks over all grid pairs.
#[derive(Debug, Clone)]
pub struct LongCovarianceField {
    field: CovarianceField,
    k: usize,
    p: usize,
}

impl LongCovarianceField {
    /// Wraps a field with block size `k + p`; the first `k` coordinates are the
    /// long moments, the last `p` the nuisance estimator.
    pub fn new(field: CovarianceField, k: usize, p: usize) -> Result<Self> {
        if field.k() != k + p {
            return Err(Error::Dimension(format!(
                "long field block size {} differs from k + p = {}",
                field.k(),
                k + p
            )));
        }
        Ok(Self { field, k, p })
    }

    pub fn field(&self) -> &CovarianceField {
        &self.field
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Fails when a diagonal block is degenerate along some direction, which
    /// happens when the nuisance estimator reuses a subset of the moments.
    pub fn validate(&self) -> Result<()> {
        for i in 0..self.field.grid().len() {
            let b = self.field.block(i, i);
            let (lo, hi) = linalg::eig_range(&b);
            if lo <= 1e-10 * hi.max(f64::MIN_POSITIVE) {
                return Err(Error::Singular {
                    index: i,
                    reason: format!(
                        "long covariance is degenerate (min eigenvalue {lo:e}); drop the \
                         redundant moment directions from the long model"
                    ),
                });
            }
        }
        Ok(())
    }
}

/// `g(theta_i) = (1/sqrt(T)) sum_t phi_L(t, beta_hat(theta_i), theta_i)`.
pub fn concentrated_moment(
    model: &dyn LongMomentModel,
    path: &ProfilePath,
) -> Result<MomentProcess> {
    let grid = &path.grid;
    if model.q() != grid.q() {
        return Err(Error::Dimension(format!(
            "model has q = {}, grid has q = {}",
            model.q(),
            grid.q()
        )));
    }
    if model.p() != path.p() {
        return Err(Error::Dimension(format!(
            "model has p = {}, path has p = {}",
            model.p(),
            path.p()
        )));
    }
    let k = model.k();
    let t = model.t();
    let scale = 1.0 / (t as f64).sqrt();
    let mut values = vec![0.0; grid.len() * k];
    for (i, theta) in grid.points().iter().enumerate() {
        let beta = &path.betas[i];
        let out = &mut values[i * k..(i + 1) * k];
        for s in 0..t {
            let v = model.phi(s, beta, theta)?;
            if v.len() != k {
                return Err(Error::Dimension(format!(
                    "phi returned {} values, expected {k}",
                    v.len()
                )));
            }
            for (o, x) in out.iter_mut().zip(&v) {
                *o += x;
            }
        }
        for o in out.iter_mut() {
            *o *= scale;
        }
    }
    MomentProcess::new(grid.clone(), values, k, t)
}

/// `Sigma(theta_i, theta_j) = (I_k, M(theta_i)) Sigma_L(i, j) (I_k, M(theta_j))'`.
pub fn concentrated_covariance(
    long: &LongCovarianceField,
    path: &ProfilePath,
) -> Result<CovarianceField> {
    let (k, p) = (long.k, long.p);
    let grid = long.field.grid();
    if grid.points() != path.grid.points() {
        return Err(Error::Dimension("long field and profile path grids differ".into()));
    }
    if path.p() != p || path.m_hats.iter().any(|m| m.nrows() != k || m.ncols() != p) {
        return Err(Error::Dimension(format!(
            "Jacobian estimates must be {k}x{p}"
        )));
    }
    let n = grid.len();
    // Block-diagonal selector S with blocks (I_k, M_i); result is S Sigma_L S'.
    let kp = k + p;
    let mut sel = DMatrix::zeros(n * k, n * kp);
    for (i, m) in path.m_hats.iter().enumerate() {
        for r in 0..k {
            sel[(i * k + r, i * kp + r)] = 1.0;
            for c in 0..p {
                sel[(i * k + r, i * kp + k + c)] = m[(r, c)];
            }
        }
    }
    let out = &sel * long.field.assembled() * sel.transpose();
    CovarianceField::from_assembled(grid.clone(), k, out)
        .map(|f| f.with_lambda_bar(long.field.lambda_bar()))
}
