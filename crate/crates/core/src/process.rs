//! Moment processes and mean functions evaluated on a grid.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grid::ParamGrid;

fn check_values(grid: &ParamGrid, values: &[f64], k: usize, what: &str) -> Result<()> {
    if k == 0 {
        return Err(Error::Dimension(format!("{what}: moment dimension must be >= 1")));
    }
    if values.len() != grid.len() * k {
        return Err(Error::Dimension(format!(
            "{what}: expected {} x {k} values, got {}",
            grid.len(),
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(what.to_string()));
    }
    Ok(())
}

fn to_row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.push(m[(r, c)]);
        }
    }
    out
}

/// The scaled sample moment `g_T(theta_i)` at every grid point.
///
/// Values already carry the `1/sqrt(T)` normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentProcess {
    grid: Arc<ParamGrid>,
    values: Vec<f64>,
    k: usize,
    t: usize,
}

impl MomentProcess {
    /// `values` is row-major, `G x k`.
    pub fn new(grid: Arc<ParamGrid>, values: Vec<f64>, k: usize, t: usize) -> Result<Self> {
        check_values(&grid, &values, k, "moment process")?;
        Ok(Self { grid, values, k, t })
    }

    /// From a `G x k` matrix whose row `i` is `g(theta_i)`.
    pub fn from_matrix(grid: Arc<ParamGrid>, m: &DMatrix<f64>, t: usize) -> Result<Self> {
        if m.nrows() != grid.len() {
            return Err(Error::Dimension(format!(
                "moment matrix has {} rows, grid has {} points",
                m.nrows(),
                grid.len()
            )));
        }
        Self::new(grid, to_row_major(m), m.ncols(), t)
    }

    pub fn grid(&self) -> &Arc<ParamGrid> {
        &self.grid
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Number of observations behind the process.
    pub fn t(&self) -> usize {
        self.t
    }

    pub fn value(&self, i: usize) -> &[f64] {
        &self.values[i * self.k..(i + 1) * self.k]
    }

    pub fn null_value(&self) -> &[f64] {
        self.value(self.grid.null_index())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.grid.len(), self.k, &self.values)
    }

    /// Same values, re-attached to a grid with the same points (e.g. another null).
    pub fn regrid(&self, grid: Arc<ParamGrid>) -> Result<Self> {
        if grid.points() != self.grid.points() {
            return Err(Error::Dimension("regrid requires identical grid points".into()));
        }
        Ok(Self {
            grid,
            values: self.values.clone(),
            k: self.k,
            t: self.t,
        })
    }
}

/// A deterministic mean function `m_T(theta_i)` on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanFunction {
    grid: Arc<ParamGrid>,
    values: Vec<f64>,
    k: usize,
}

impl MeanFunction {
    pub fn new(grid: Arc<ParamGrid>, values: Vec<f64>, k: usize) -> Result<Self> {
        check_values(&grid, &values, k, "mean function")?;
        Ok(Self { grid, values, k })
    }

    pub fn zero(grid: Arc<ParamGrid>, k: usize) -> Self {
        let values = vec![0.0; grid.len() * k];
        Self { grid, values, k }
    }

    /// Mean built pointwise from `f(theta) -> k-vector`.
    pub fn from_fn(
        grid: Arc<ParamGrid>,
        k: usize,
        mut f: impl FnMut(&[f64]) -> Vec<f64>,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(grid.len() * k);
        for p in grid.points() {
            let v = f(p);
            if v.len() != k {
                return Err(Error::Dimension(format!(
                    "mean function returned {} values, expected {k}",
                    v.len()
                )));
            }
            values.extend(v);
        }
        Self::new(grid, values, k)
    }

    pub fn grid(&self) -> &Arc<ParamGrid> {
        &self.grid
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn value(&self, i: usize) -> &[f64] {
        &self.values[i * self.k..(i + 1) * self.k]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Whether the mean vanishes at the null point (a null-scenario mean).
    pub fn is_null(&self) -> bool {
        self.value(self.grid.null_index()).iter().all(|v| *v == 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid3() -> Arc<ParamGrid> {
        Arc::new(ParamGrid::new(vec![vec![0.0], vec![1.0], vec![2.0]], 1).unwrap())
    }

    #[test]
    fn shapes_are_checked() {
        assert!(MomentProcess::new(grid3(), vec![0.0; 5], 2, 10).is_err());
        assert!(MomentProcess::new(grid3(), vec![0.0; 6], 2, 10).is_ok());
        assert!(MomentProcess::new(grid3(), vec![0.0; 0], 0, 10).is_err());
        assert!(MomentProcess::new(grid3(), vec![f64::NAN; 3], 1, 10).is_err());
    }

    #[test]
    fn matrix_round_trip() {
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let g = MomentProcess::from_matrix(grid3(), &m, 4).unwrap();
        assert_eq!(g.value(1), &[3.0, 4.0]);
        assert_eq!(g.null_value(), &[3.0, 4.0]);
        assert_eq!(g.to_matrix(), m);
    }

    #[test]
    fn null_mean_detection() {
        let m = MeanFunction::from_fn(grid3(), 1, |p| vec![(p[0] - 1.0).powi(2)]).unwrap();
        assert!(m.is_null());
        let m = MeanFunction::from_fn(grid3(), 1, |p| vec![p[0]]).unwrap();
        assert!(!m.is_null());
    }
}
