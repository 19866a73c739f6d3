//! Small dense linear-algebra helpers shared by every module.
//!
//! Everything here works on `nalgebra::DMatrix<f64>`. Matrices are at most
//! `k x k` per block or `Gk x Gk` when a whole covariance field is assembled.

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigenvalue floor, relative to `trace(A)/k`, below which [`solve_spd`] ridges.
pub const RIDGE_TRIGGER: f64 = 1e-10;
/// Ridge size, relative to `trace(A)/k`.
pub const RIDGE_SIZE: f64 = 1e-8;

/// Output of [`solve_spd`].
#[derive(Debug, Clone)]
pub struct SpdSolution {
    pub x: DMatrix<f64>,
    /// `true` when `A + eps*I` was factorized instead of `A`.
    pub ridged: bool,
}

fn check_square_finite(a: &DMatrix<f64>, what: &str) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::Dimension(format!(
            "{what} must be square, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(what.to_string()));
    }
    Ok(())
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn eig_range(a: &DMatrix<f64>) -> (f64, f64) {
    if a.nrows() == 0 {
        return (0.0, 0.0);
    }
    let eig = SymmetricEigen::new(a.clone());
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    (min, max)
}

/// Regularized copy of `a` used by [`solve_spd`], plus whether the ridge fired.
fn regularize(a: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let k = a.nrows();
    let scale = a.trace() / k as f64;
    let (min_eig, _) = eig_range(a);
    if min_eig < RIDGE_TRIGGER * scale {
        let eps = RIDGE_SIZE * scale;
        (a + DMatrix::identity(k, k) * eps, true)
    } else {
        (a.clone(), false)
    }
}

/// Solves `A x = b` for symmetric positive (semi)definite `A`.
///
/// When the smallest eigenvalue of `A` falls below `1e-10 * trace(A)/k` the
/// system `(A + 1e-8 * trace(A)/k * I) x = b` is solved instead and the
/// returned solution carries `ridged = true`.
pub fn solve_spd(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<SpdSolution> {
    check_square_finite(a, "matrix")?;
    if b.nrows() != a.nrows() {
        return Err(Error::Dimension(format!(
            "right-hand side has {} rows, matrix is {}x{}",
            b.nrows(),
            a.nrows(),
            a.ncols()
        )));
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("right-hand side".into()));
    }
    if a.nrows() == 0 {
        return Ok(SpdSolution {
            x: b.clone(),
            ridged: false,
        });
    }
    let (reg, ridged) = regularize(a);
    let chol = Cholesky::new(reg).ok_or_else(|| {
        Error::Factorization(format!(
            "matrix is not positive definite even after ridge (trace {})",
            a.trace()
        ))
    })?;
    Ok(SpdSolution {
        x: chol.solve(b),
        ridged,
    })
}

/// Inverse of a symmetric positive definite matrix with the same ridge rule
/// as [`solve_spd`]. The result is symmetrized.
pub fn spd_inverse(a: &DMatrix<f64>) -> Result<SpdSolution> {
    let k = a.nrows();
    let mut sol = solve_spd(a, &DMatrix::identity(k, k))?;
    let t = sol.x.transpose();
    sol.x = (&sol.x + t) * 0.5;
    Ok(sol)
}

/// A root `L` with `L L' = A` for symmetric PSD `A`.
///
/// Uses the Cholesky factor when `A` is positive definite and falls back to
/// `Q diag(sqrt(max(lambda, 0)))` otherwise, so singular and zero matrices are
/// accepted.
pub fn psd_root(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_square_finite(a, "covariance")?;
    if let Some(chol) = Cholesky::new(a.clone()) {
        let l = chol.l();
        if l.iter().all(|v| v.is_finite()) {
            return Ok(l);
        }
    }
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut root = eig.eigenvectors;
    for (j, lambda) in eig.eigenvalues.iter().enumerate() {
        let s = lambda.max(0.0).sqrt();
        root.column_mut(j).scale_mut(s);
    }
    if root.iter().any(|v| !v.is_finite()) {
        return Err(Error::Factorization("eigen root is not finite".into()));
    }
    Ok(root)
}

/// `x' A x` for a square `A`.
pub fn quad_form(a: &DMatrix<f64>, x: &[f64]) -> f64 {
    let k = x.len();
    let mut acc = 0.0;
    for c in 0..k {
        let mut col = 0.0;
        for r in 0..k {
            col += a[(r, c)] * x[r];
        }
        acc += col * x[c];
    }
    acc
}

/// Maximum absolute entry of `a - a'`.
pub fn asymmetry(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}
