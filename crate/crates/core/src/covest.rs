//! Covariance-field estimators from per-observation moment contributions.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::field::CovarianceField;
use crate::grid::ParamGrid;
use crate::process::MomentProcess;

/// Per-observation contributions `phi(X_t, theta_i)`, stored as a `T x Gk`
/// matrix whose row `t` concatenates the `k`-vectors for every grid point.
#[derive(Debug, Clone)]
pub struct MomentPanel {
    grid: Arc<ParamGrid>,
    k: usize,
    data: DMatrix<f64>,
}

impl MomentPanel {
    pub fn new(grid: Arc<ParamGrid>, k: usize, data: DMatrix<f64>) -> Result<Self> {
        if k == 0 || data.ncols() != grid.len() * k {
            return Err(Error::Dimension(format!(
                "panel has {} columns, expected {} x {k}",
                data.ncols(),
                grid.len()
            )));
        }
        if data.nrows() == 0 {
            return Err(Error::Invalid("panel has no observations".into()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("moment panel".into()));
        }
        Ok(Self { grid, k, data })
    }

    /// Builds the panel from `phi(t, i)`, the `k`-vector for observation `t` at grid point `i`.
    pub fn from_fn(
        grid: Arc<ParamGrid>,
        k: usize,
        t: usize,
        mut phi: impl FnMut(usize, usize) -> Vec<f64>,
    ) -> Result<Self> {
        let g = grid.len();
        let mut data = DMatrix::zeros(t, g * k);
        for i in 0..g {
            for s in 0..t {
                let v = phi(s, i);
                if v.len() != k {
                    return Err(Error::Dimension(format!(
                        "phi returned {} values, expected {k}",
                        v.len()
                    )));
                }
                for (r, x) in v.into_iter().enumerate() {
                    data[(s, i * k + r)] = x;
                }
            }
        }
        Self::new(grid, k, data)
    }

    pub fn grid(&self) -> &Arc<ParamGrid> {
        &self.grid
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn t(&self) -> usize {
        self.data.nrows()
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    /// `phi(X_t, theta_i)`.
    pub fn contribution(&self, t: usize, i: usize) -> Vec<f64> {
        (0..self.k).map(|r| self.data[(t, i * self.k + r)]).collect()
    }

    fn centered(&self, center: bool) -> DMatrix<f64> {
        let mut x = self.data.clone();
        if center {
            let t = x.nrows() as f64;
            for mut col in x.column_iter_mut() {
                let mean = col.sum() / t;
                col.add_scalar_mut(-mean);
            }
        }
        x
    }
}

/// `g(theta_i) = (1/sqrt(T)) sum_t phi_t(theta_i)`.
pub fn build_moment_process(panel: &MomentPanel) -> Result<MomentProcess> {
    let t = panel.t();
    let scale = 1.0 / (t as f64).sqrt();
    let sums: Vec<f64> = panel
        .data
        .column_iter()
        .map(|c| c.iter().sum::<f64>() * scale)
        .collect();
    MomentProcess::new(panel.grid.clone(), sums, panel.k, t)
}

fn require_two(panel: &MomentPanel) -> Result<()> {
    if panel.t() < 2 {
        return Err(Error::Invalid(format!(
            "covariance estimation needs T >= 2, got {}",
            panel.t()
        )));
    }
    Ok(())
}

/// `(1/T) sum_t phi~_t phi~_t'` over all grid pairs, with `phi~` demeaned per
/// grid point when `center` is set.
pub fn iid_covariance(panel: &MomentPanel, center: bool) -> Result<CovarianceField> {
    require_two(panel)?;
    let x = panel.centered(center);
    let t = x.nrows() as f64;
    let s = x.tr_mul(&x) / t;
    CovarianceField::from_assembled(panel.grid.clone(), panel.k, s)
}

/// Bartlett weight `1 - l/(lags + 1)`.
pub fn bartlett_weight(l: usize, lags: usize) -> f64 {
    1.0 - l as f64 / (lags + 1) as f64
}

/// Newey-West estimator applied to every grid pair:
/// `Gamma_0 + sum_{l=1}^{lags} w_l (Gamma_l + Gamma_l')` with
/// `Gamma_l(i, j) = (1/T) sum_{t>l} phi~_t(theta_i) phi~_{t-l}(theta_j)'`.
pub fn newey_west(panel: &MomentPanel, lags: usize, center: bool) -> Result<CovarianceField> {
    require_two(panel)?;
    if lags >= panel.t() {
        return Err(Error::Invalid(format!(
            "lags must be below T = {}, got {lags}",
            panel.t()
        )));
    }
    let x = panel.centered(center);
    let n = x.nrows();
    let t = n as f64;
    let mut s = x.tr_mul(&x) / t;
    for l in 1..=lags {
        let lead = x.rows(l, n - l);
        let lag = x.rows(0, n - l);
        let gamma = lead.tr_mul(&lag) / t;
        let w = bartlett_weight(l, lags);
        s += (&gamma + gamma.transpose()) * w;
    }
    CovarianceField::from_assembled(panel.grid.clone(), panel.k, s)
}

/// PSD repair result.
#[derive(Debug, Clone)]
pub struct PsdProjection {
    pub field: CovarianceField,
    /// Most negative eigenvalue removed (0 when nothing was clipped).
    pub most_negative: f64,
    /// Sum of the absolute values of all clipped eigenvalues.
    pub clipped_total: f64,
}

/// Clips negative eigenvalues of the assembled matrix to zero.
pub fn psd_project(field: &CovarianceField) -> Result<PsdProjection> {
    let eig = SymmetricEigen::new(field.assembled().clone());
    let mut most_negative: f64 = 0.0;
    let mut clipped_total = 0.0;
    let mut vals = eig.eigenvalues.clone();
    for v in vals.iter_mut() {
        if *v < 0.0 {
            most_negative = most_negative.min(*v);
            clipped_total += -*v;
            *v = 0.0;
        }
    }
    let q = &eig.eigenvectors;
    let mut scaled = q.clone();
    for (j, v) in vals.iter().enumerate() {
        scaled.column_mut(j).scale_mut(*v);
    }
    let rebuilt = if clipped_total == 0.0 {
        field.assembled().clone()
    } else {
        scaled * q.transpose()
    };
    let out = CovarianceField::from_assembled(field.grid().clone(), field.k(), rebuilt)?
        .with_lambda_bar(field.lambda_bar());
    Ok(PsdProjection {
        field: out,
        most_negative,
        clipped_total,
    })
}
