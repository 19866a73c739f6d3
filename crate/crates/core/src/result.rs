use std::sync::Arc;

use serde::Serialize;

use crate::grid::ParamGrid;

/// Outcome of a single test of `H0: m(theta_0) = 0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestResult {
    pub statistic: f64,
    pub critical_value: f64,
    pub p_value: f64,
    pub reject: bool,
    pub n_draws: usize,
    pub alpha: f64,
    /// A covariance inverse needed the ridge or a degenerate statistic fell back.
    pub degraded: bool,
}

/// Accept/reject mask over the grid from test inversion.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceSet {
    pub grid: Arc<ParamGrid>,
    pub accepted: Vec<bool>,
    /// Grid points whose test failed numerically; they are reported as not accepted.
    pub failed: Vec<bool>,
    pub level: f64,
}

impl ConfidenceSet {
    pub fn n_accepted(&self) -> usize {
        self.accepted.iter().filter(|a| **a).count()
    }

    /// Share of grid points in the set.
    pub fn coverage_fraction(&self) -> f64 {
        self.n_accepted() as f64 / self.accepted.len() as f64
    }

    pub fn contains(&self, index: usize) -> bool {
        self.accepted[index]
    }

    /// Long-format CSV: one column per parameter coordinate, then `accepted` (0/1).
    pub fn write_csv<W: std::io::Write>(
        &self,
        mut w: W,
        names: &[&str],
    ) -> std::io::Result<()> {
        let mut header: Vec<String> = (0..self.grid.q())
            .map(|j| names.get(j).map_or(format!("theta{}", j + 1), |s| s.to_string()))
            .collect();
        header.push("accepted".into());
        writeln!(w, "{}", header.join(","))?;
        for (i, p) in self.grid.points().iter().enumerate() {
            let mut row: Vec<String> = p.iter().map(|v| format!("{v}")).collect();
            row.push(if self.accepted[i] { "1".into() } else { "0".into() });
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}
