//! Test statistics in the `(xi, h, Sigma)` form consumed by the conditional engine.
//!
//! `xi` plays the role of `g(theta_0)`; the process at every other grid point
//! is rebuilt as `V(theta_i) xi + h(theta_i)`.
//!
//! The K and JK constructions are reconstructions: the score direction is
//! `D = -dh/dtheta(theta_0)` taken by finite differences on the grid, and J is
//! the part of S orthogonal to that direction, calibrated against `chi2(k - q)`.

use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::condcrit::{HProcess, StatisticFunctional};
use crate::error::{Error, Result};
use crate::field::CovarianceField;
use crate::grid::ParamGrid;
use crate::linalg;

fn check_xi(xi: &[f64], h: &HProcess) -> Result<()> {
    if xi.len() != h.k() {
        return Err(Error::Dimension(format!(
            "xi has length {}, expected {}",
            xi.len(),
            h.k()
        )));
    }
    Ok(())
}

/// `xi' Sigma(theta_0, theta_0)^{-1} xi`.
pub fn s_stat(xi: &[f64], h: &HProcess, field: &CovarianceField) -> Result<f64> {
    check_xi(xi, h)?;
    let inv = field.diag_inverse(h.null_index())?;
    Ok(linalg::quad_form(inv, xi))
}

/// Quasi-likelihood ratio: the S statistic at the null minus the minimum over
/// the grid of `g(theta)' Sigma(theta, theta)^{-1} g(theta)`, where
/// `g(theta_i) = V(theta_i) xi + h(theta_i)`. The null is part of the grid,
/// so the value is never negative.
pub fn qlr(xi: &[f64], h: &HProcess, field: &CovarianceField) -> Result<f64> {
    check_xi(xi, h)?;
    let k = h.k();
    let null = h.null_index();
    let s = linalg::quad_form(field.diag_inverse(null)?, xi);
    let mut buf = vec![0.0; k];
    let mut min = s;
    for i in 0..h.len() {
        if i == null {
            continue;
        }
        h.propagate_into(i, xi, &mut buf);
        let v = linalg::quad_form(field.diag_inverse(i)?, &buf);
        if v < min {
            min = v;
        }
    }
    Ok(s - min)
}

/// Positive definite weights `W(theta_i)` replacing `Sigma(theta_i, theta_i)^{-1}`
/// in QLR-type statistics.
#[derive(Debug, Clone)]
pub struct WeightField {
    grid: Arc<ParamGrid>,
    weights: Vec<DMatrix<f64>>,
}

impl WeightField {
    pub fn new(grid: Arc<ParamGrid>, weights: Vec<DMatrix<f64>>) -> Result<Self> {
        if weights.len() != grid.len() {
            return Err(Error::Dimension(format!(
                "{} weights for {} grid points",
                weights.len(),
                grid.len()
            )));
        }
        for (i, w) in weights.iter().enumerate() {
            if w.nrows() != w.ncols() {
                return Err(Error::Dimension(format!("weight {i} is not square")));
            }
            if linalg::asymmetry(w) > 1e-10 {
                return Err(Error::Invalid(format!("weight {i} is not symmetric")));
            }
            let (lo, _) = linalg::eig_range(w);
            if !(lo > 0.0) {
                return Err(Error::Invalid(format!(
                    "weight {i} is not positive definite (min eigenvalue {lo})"
                )));
            }
        }
        Ok(Self { grid, weights })
    }

    /// `W(theta_i) = I_k` everywhere.
    pub fn identity(grid: Arc<ParamGrid>, k: usize) -> Self {
        let weights = vec![DMatrix::identity(k, k); grid.len()];
        Self { grid, weights }
    }

    /// `W(theta_i) = Sigma(theta_i, theta_i)^{-1}`, which turns `qlr_weighted` into `qlr`.
    pub fn inverse_diagonal(field: &CovarianceField) -> Result<Self> {
        let weights = (0..field.grid().len())
            .map(|i| field.diag_inverse(i).cloned())
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            grid: field.grid().clone(),
            weights,
        })
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            grid: self.grid.clone(),
            weights: self.weights.iter().map(|w| w * c).collect(),
        }
    }

    pub fn weight(&self, i: usize) -> &DMatrix<f64> {
        &self.weights[i]
    }
}

/// QLR-type statistic with user weights.
pub fn qlr_weighted(
    xi: &[f64],
    h: &HProcess,
    _field: &CovarianceField,
    w: &WeightField,
) -> Result<f64> {
    check_xi(xi, h)?;
    if w.weights.len() != h.len() || w.weights[0].nrows() != h.k() {
        return Err(Error::Dimension("weight field does not match process".into()));
    }
    let null = h.null_index();
    let s = linalg::quad_form(&w.weights[null], xi);
    let mut buf = vec![0.0; h.k()];
    let mut min = s;
    for i in 0..h.len() {
        if i == null {
            continue;
        }
        h.propagate_into(i, xi, &mut buf);
        min = min.min(linalg::quad_form(&w.weights[i], &buf));
    }
    Ok(s - min)
}

/// How the finite-difference neighbours of the null are chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum Stencil {
    /// Nearest grid point on each side of the null along every coordinate axis.
    Nearest,
    /// Points at exactly `theta_0 +/- step[j] e_j`.
    Step(Vec<f64>),
}

/// `D = -dh/dtheta(theta_0)`, a `k x q` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    pub d: DMatrix<f64>,
}

fn axis_neighbours(grid: &ParamGrid, null: usize, j: usize) -> (Option<usize>, Option<usize>) {
    let t0 = grid.point(null);
    let scale = t0.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-12 * scale;
    let mut up: Option<(usize, f64)> = None;
    let mut down: Option<(usize, f64)> = None;
    for (i, p) in grid.points().iter().enumerate() {
        if i == null {
            continue;
        }
        let on_axis = p
            .iter()
            .zip(t0)
            .enumerate()
            .all(|(l, (a, b))| l == j || (a - b).abs() <= tol);
        if !on_axis {
            continue;
        }
        let d = p[j] - t0[j];
        if d > 0.0 && up.is_none_or(|(_, u)| d < u) {
            up = Some((i, d));
        } else if d < 0.0 && down.is_none_or(|(_, u)| -d < u) {
            down = Some((i, -d));
        }
    }
    (up.map(|u| u.0), down.map(|d| d.0))
}

/// Finite-difference score matrix from the grid values of `h`.
///
/// Column `j` is `-(h(up) - h(down)) / (theta_up - theta_down)` for the
/// stencil points along axis `j`; a one-sided difference against the null is
/// used when only one neighbour exists.
pub fn score_matrix(h: &HProcess, stencil: &Stencil) -> Result<ScoreMatrix> {
    let grid = h.grid();
    let q = grid.q();
    let k = h.k();
    let null = grid.null_index();
    let t0 = grid.point(null);
    let mut d = DMatrix::zeros(k, q);
    for j in 0..q {
        let (up, down) = match stencil {
            Stencil::Nearest => axis_neighbours(grid, null, j),
            Stencil::Step(steps) => {
                let step = *steps.get(j).ok_or(Error::NoStencil(j))?;
                let tol = 1e-9 * step.abs().max(1e-300);
                let mut plus = t0.to_vec();
                plus[j] += step;
                let mut minus = t0.to_vec();
                minus[j] -= step;
                (grid.find(&plus, tol), grid.find(&minus, tol))
            }
        };
        let (hi, lo) = match (up, down) {
            (Some(u), Some(l)) => (u, l),
            (Some(u), None) => (u, null),
            (None, Some(l)) => (null, l),
            (None, None) => return Err(Error::NoStencil(j)),
        };
        let dx = grid.point(hi)[j] - grid.point(lo)[j];
        let (vh, vl) = (h.value(hi), h.value(lo));
        for r in 0..k {
            d[(r, j)] = -(vh[r] - vl[r]) / dx;
        }
    }
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("score matrix".into()));
    }
    Ok(ScoreMatrix { d })
}

/// K statistic value and whether it fell back to S.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KValue {
    pub value: f64,
    pub degenerate: bool,
}

/// Relative eigenvalue floor under which `D' Sigma00^{-1} D` counts as rank deficient.
const RANK_TOL: f64 = 1e-10;

/// `K = xi' S^{-1} D (D' S^{-1} D)^{-1} D' S^{-1} xi` with `S = Sigma(theta_0, theta_0)`.
///
/// A rank deficient `D` gives the S statistic and `degenerate = true`.
pub fn k_stat(
    xi: &[f64],
    h: &HProcess,
    field: &CovarianceField,
    d: &ScoreMatrix,
) -> Result<KValue> {
    check_xi(xi, h)?;
    let k = h.k();
    if d.d.nrows() != k {
        return Err(Error::Dimension(format!(
            "score matrix has {} rows, expected {k}",
            d.d.nrows()
        )));
    }
    let inv = field.diag_inverse(h.null_index())?;
    let x = DVector::from_column_slice(xi);
    let inv_d = inv * &d.d;
    let a = inv_d.transpose() * &x;
    let b = d.d.transpose() * &inv_d;
    let b = (&b + b.transpose()) * 0.5;
    let (lo, hi) = linalg::eig_range(&b);
    if !(hi > 0.0) || lo <= RANK_TOL * hi || d.d.ncols() > k {
        return Ok(KValue {
            value: linalg::quad_form(inv, xi),
            degenerate: true,
        });
    }
    let chol = nalgebra::Cholesky::new(b).ok_or_else(|| {
        Error::Factorization("D' Sigma00^{-1} D is not positive definite".into())
    })?;
    let sol = chol.solve(&a);
    Ok(KValue {
        value: a.dot(&sol),
        degenerate: false,
    })
}

/// Upper `1 - alpha` quantile of `chi2(df)`.
pub fn chi2_quantile(df: usize, alpha: f64) -> f64 {
    ChiSquared::new(df as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(1.0 - alpha)
}

/// `P(chi2(df) >= x)`.
pub fn chi2_sf(df: usize, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    ChiSquared::new(df as f64)
        .expect("positive degrees of freedom")
        .sf(x)
}

/// Outcome of the JK rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JkOutcome {
    pub reject: bool,
    pub k: f64,
    pub j: f64,
    pub k_critical: f64,
    /// `None` when `k <= q` and only the K part was used.
    pub j_critical: Option<f64>,
    pub k_only: bool,
    pub degenerate: bool,
    /// `alpha * min(p_K / alpha_k, p_J / alpha_j)`, below `alpha` iff `reject`.
    pub p_value: f64,
}

/// Rejects when `K > chi2_q(1 - alpha_k)` or `J = S - K > chi2_{k-q}(1 - alpha_j)`.
///
/// With `k <= q` there is no J part and K alone is compared with
/// `chi2_q(1 - alpha_k - alpha_j)`.
pub fn jk_test(
    xi: &[f64],
    h: &HProcess,
    field: &CovarianceField,
    d: &ScoreMatrix,
    alpha_k: f64,
    alpha_j: f64,
) -> Result<JkOutcome> {
    let kdim = h.k();
    let q = d.d.ncols();
    let kv = k_stat(xi, h, field, d)?;
    let s = s_stat(xi, h, field)?;
    let alpha = alpha_k + alpha_j;
    if kdim <= q {
        let crit = chi2_quantile(q, alpha);
        let p = chi2_sf(q, kv.value);
        return Ok(JkOutcome {
            reject: kv.value > crit,
            k: kv.value,
            j: 0.0,
            k_critical: crit,
            j_critical: None,
            k_only: true,
            degenerate: kv.degenerate,
            p_value: p,
        });
    }
    let j = (s - kv.value).max(0.0);
    let k_crit = chi2_quantile(q, alpha_k);
    let j_crit = chi2_quantile(kdim - q, alpha_j);
    let p_k = chi2_sf(q, kv.value);
    let p_j = chi2_sf(kdim - q, j);
    Ok(JkOutcome {
        reject: kv.value > k_crit || j > j_crit,
        k: kv.value,
        j,
        k_critical: k_crit,
        j_critical: Some(j_crit),
        k_only: false,
        degenerate: kv.degenerate,
        p_value: (alpha * (p_k / alpha_k).min(p_j / alpha_j)).min(1.0),
    })
}

/// The QLR statistic as a functional.
#[derive(Debug, Clone, Copy, Default)]
pub struct Qlr;

impl StatisticFunctional for Qlr {
    fn name(&self) -> &str {
        "qlr"
    }
    fn evaluate(&self, xi: &[f64], h: &HProcess, field: &CovarianceField) -> Result<f64> {
        qlr(xi, h, field)
    }
}

/// The S (Anderson-Rubin type) statistic as a functional.
#[derive(Debug, Clone, Copy, Default)]
pub struct SStat;

impl StatisticFunctional for SStat {
    fn name(&self) -> &str {
        "s"
    }
    fn evaluate(&self, xi: &[f64], h: &HProcess, field: &CovarianceField) -> Result<f64> {
        s_stat(xi, h, field)
    }
}

/// The K statistic with the score matrix recomputed from `h`.
#[derive(Debug, Clone)]
pub struct KStat {
    pub stencil: Stencil,
}

impl StatisticFunctional for KStat {
    fn name(&self) -> &str {
        "k"
    }
    fn evaluate(&self, xi: &[f64], h: &HProcess, field: &CovarianceField) -> Result<f64> {
        let d = score_matrix(h, &self.stencil)?;
        Ok(k_stat(xi, h, field, &d)?.value)
    }
}

/// QLR-type statistic with a fixed weight field.
#[derive(Debug, Clone)]
pub struct QlrWeighted {
    pub weights: WeightField,
}

impl StatisticFunctional for QlrWeighted {
    fn name(&self) -> &str {
        "qlr-weighted"
    }
    fn evaluate(&self, xi: &[f64], h: &HProcess, field: &CovarianceField) -> Result<f64> {
        qlr_weighted(xi, h, field, &self.weights)
    }
}

/// Statistic names understood by the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StatKind {
    Qlr,
    S,
    K,
    Jk,
    QlrWeighted,
}

impl StatKind {
    pub const ALL: [StatKind; 5] = [
        StatKind::Qlr,
        StatKind::S,
        StatKind::K,
        StatKind::Jk,
        StatKind::QlrWeighted,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StatKind::Qlr => "qlr",
            StatKind::S => "s",
            StatKind::K => "k",
            StatKind::Jk => "jk",
            StatKind::QlrWeighted => "qlr-weighted",
        }
    }
}

impl std::fmt::Display for StatKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StatKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "qlr" => Ok(StatKind::Qlr),
            "s" | "ar" => Ok(StatKind::S),
            "k" => Ok(StatKind::K),
            "jk" => Ok(StatKind::Jk),
            "qlr-weighted" => Ok(StatKind::QlrWeighted),
            other => Err(Error::Invalid(format!(
                "unknown statistic '{other}' (expected qlr, s, k, jk, qlr-weighted)"
            ))),
        }
    }
}
