//! Grid-indexed covariance fields `Sigma(theta_i, theta_j)`.

use std::io::Write;
use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DMatrixView, SymmetricEigen};

use crate::error::{Error, Result};
use crate::grid::ParamGrid;
use crate::linalg::{self, SpdSolution};

/// Default eigenvalue bound used when validating a field.
pub const DEFAULT_LAMBDA_BAR: f64 = 1e6;

/// Assembled dimension above which [`validate_field`] skips the full eigensolve.
pub const FULL_EIGEN_LIMIT: usize = 2000;

/// Covariance blocks for every pair of grid points, stored as one symmetric
/// `Gk x Gk` matrix. Block `(i, j)` is `Sigma(theta_i, theta_j)`.
#[derive(Debug)]
pub struct CovarianceField {
    grid: Arc<ParamGrid>,
    k: usize,
    assembled: DMatrix<f64>,
    lambda_bar: f64,
    input_asymmetry: f64,
    diag_inv: OnceLock<Vec<Option<SpdSolution>>>,
}

impl Clone for CovarianceField {
    fn clone(&self) -> Self {
        Self {
            grid: self.grid.clone(),
            k: self.k,
            assembled: self.assembled.clone(),
            lambda_bar: self.lambda_bar,
            input_asymmetry: self.input_asymmetry,
            diag_inv: OnceLock::new(),
        }
    }
}

impl PartialEq for CovarianceField {
    fn eq(&self, other: &Self) -> bool {
        self.grid == other.grid && self.k == other.k && self.assembled == other.assembled
    }
}

impl CovarianceField {
    /// Wraps an assembled `Gk x Gk` matrix. The matrix is symmetrized, so the
    /// stored blocks satisfy `block(i,j) == block(j,i)'` exactly.
    pub fn from_assembled(grid: Arc<ParamGrid>, k: usize, assembled: DMatrix<f64>) -> Result<Self> {
        let n = grid.len() * k;
        if k == 0 || assembled.nrows() != n || assembled.ncols() != n {
            return Err(Error::Dimension(format!(
                "covariance field for {} points and k={k} must be {n}x{n}, got {}x{}",
                grid.len(),
                assembled.nrows(),
                assembled.ncols()
            )));
        }
        if assembled.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("covariance field".into()));
        }
        let input_asymmetry = linalg::asymmetry(&assembled);
        let mut a = assembled;
        for i in 0..n {
            for j in (i + 1)..n {
                let m = 0.5 * (a[(i, j)] + a[(j, i)]);
                a[(i, j)] = m;
                a[(j, i)] = m;
            }
        }
        Ok(Self {
            grid,
            k,
            assembled: a,
            lambda_bar: DEFAULT_LAMBDA_BAR,
            input_asymmetry,
            diag_inv: OnceLock::new(),
        })
    }

    /// Builds the field from `f(i, j) = Sigma(theta_i, theta_j)`, evaluated for `i <= j` only.
    pub fn from_fn(
        grid: Arc<ParamGrid>,
        k: usize,
        mut f: impl FnMut(usize, usize) -> DMatrix<f64>,
    ) -> Result<Self> {
        let g = grid.len();
        let mut a = DMatrix::zeros(g * k, g * k);
        for i in 0..g {
            for j in i..g {
                let b = f(i, j);
                if b.nrows() != k || b.ncols() != k {
                    return Err(Error::Dimension(format!(
                        "block ({i},{j}) is {}x{}, expected {k}x{k}",
                        b.nrows(),
                        b.ncols()
                    )));
                }
                a.view_mut((i * k, j * k), (k, k)).copy_from(&b);
                if i != j {
                    a.view_mut((j * k, i * k), (k, k)).copy_from(&b.transpose());
                }
            }
        }
        Self::from_assembled(grid, k, a)
    }

    /// Separable field `rho(theta_i, theta_j) * Sigma0`.
    pub fn separable(
        grid: Arc<ParamGrid>,
        sigma0: &DMatrix<f64>,
        rho: impl Fn(&[f64], &[f64]) -> f64,
    ) -> Result<Self> {
        let g2 = grid.clone();
        Self::from_fn(grid, sigma0.nrows(), |i, j| {
            sigma0 * rho(g2.point(i), g2.point(j))
        })
    }

    pub fn with_lambda_bar(mut self, lambda_bar: f64) -> Self {
        self.lambda_bar = lambda_bar;
        self
    }

    pub fn grid(&self) -> &Arc<ParamGrid> {
        &self.grid
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn lambda_bar(&self) -> f64 {
        self.lambda_bar
    }

    pub fn assembled(&self) -> &DMatrix<f64> {
        &self.assembled
    }

    pub fn block_view(&self, i: usize, j: usize) -> DMatrixView<'_, f64> {
        self.assembled.view((i * self.k, j * self.k), (self.k, self.k))
    }

    pub fn block(&self, i: usize, j: usize) -> DMatrix<f64> {
        self.block_view(i, j).into_owned()
    }

    /// Same blocks on a grid with identical points but possibly another null.
    pub fn regrid(&self, grid: Arc<ParamGrid>) -> Result<Self> {
        if grid.points() != self.grid.points() {
            return Err(Error::Dimension("regrid requires identical grid points".into()));
        }
        let diag_inv = OnceLock::new();
        if let Some(cached) = self.diag_inv.get() {
            let _ = diag_inv.set(cached.clone());
        }
        Ok(Self {
            grid,
            k: self.k,
            assembled: self.assembled.clone(),
            lambda_bar: self.lambda_bar,
            input_asymmetry: self.input_asymmetry,
            diag_inv,
        })
    }

    fn diag_inverses(&self) -> &[Option<SpdSolution>] {
        self.diag_inv.get_or_init(|| {
            (0..self.grid.len())
                .map(|i| linalg::spd_inverse(&self.block(i, i)).ok())
                .collect()
        })
    }

    /// `Sigma(theta_i, theta_i)^{-1}` (ridged when near singular), cached.
    pub fn diag_inverse(&self, i: usize) -> Result<&DMatrix<f64>> {
        match &self.diag_inverses()[i] {
            Some(sol) => Ok(&sol.x),
            None => Err(Error::Singular {
                index: i,
                reason: "diagonal block cannot be inverted even with ridge".into(),
            }),
        }
    }

    /// Whether the inverse of diagonal block `i` needed the ridge.
    pub fn diag_ridged(&self, i: usize) -> bool {
        matches!(&self.diag_inverses()[i], Some(s) if s.ridged)
    }

    /// Null-point block inverse `Sigma(theta_0, theta_0)^{-1}`.
    pub fn null_inverse(&self) -> Result<&DMatrix<f64>> {
        self.diag_inverse(self.grid.null_index())
    }

    /// Debug dump as `(i, j, r, c, value)` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "i,j,r,c,value")?;
        let g = self.grid.len();
        for i in 0..g {
            for j in 0..g {
                let b = self.block_view(i, j);
                for r in 0..self.k {
                    for c in 0..self.k {
                        writeln!(w, "{i},{j},{r},{c},{}", b[(r, c)])?;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Outcome of [`validate_field`].
#[derive(Debug, Clone, PartialEq)]
pub struct FieldReport {
    /// Largest `|A_ij - A_ji|` of the matrix the field was built from.
    pub asymmetry: f64,
    /// Smallest eigenvalue across all diagonal blocks.
    pub min_diag_eigen: f64,
    /// Largest eigenvalue across all diagonal blocks.
    pub max_diag_eigen: f64,
    /// Grid index of the diagonal block holding `min_diag_eigen`.
    pub min_diag_index: usize,
    /// Eigen range of the assembled matrix; `None` above [`FULL_EIGEN_LIMIT`].
    pub assembled_eigen: Option<(f64, f64)>,
    /// A diagonal block has a non-positive eigenvalue.
    pub singular: bool,
    /// All diagonal-block eigenvalues lie in `[1/lambda_bar, lambda_bar]`.
    pub passes: bool,
}

/// Checks the bounded, positive definite requirement on the diagonal blocks
/// and reports the extreme eigenvalues.
pub fn validate_field(field: &CovarianceField) -> FieldReport {
    let mut min_e = f64::INFINITY;
    let mut max_e = f64::NEG_INFINITY;
    let mut min_idx = 0;
    for i in 0..field.grid().len() {
        let (lo, hi) = linalg::eig_range(&field.block(i, i));
        if lo < min_e {
            min_e = lo;
            min_idx = i;
        }
        max_e = max_e.max(hi);
    }
    let n = field.assembled().nrows();
    let assembled_eigen = (n <= FULL_EIGEN_LIMIT).then(|| {
        let eig = SymmetricEigen::new(field.assembled().clone());
        let lo = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = eig
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    });
    let lb = field.lambda_bar();
    FieldReport {
        asymmetry: field.input_asymmetry,
        min_diag_eigen: min_e,
        max_diag_eigen: max_e,
        min_diag_index: min_idx,
        assembled_eigen,
        singular: min_e <= 0.0,
        passes: min_e >= 1.0 / lb && max_e <= lb,
    }
}
