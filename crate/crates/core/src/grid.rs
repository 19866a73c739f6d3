//! Finite parameter grids with a distinguished null point.

use std::cmp::Ordering;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A finite set of `q`-dimensional parameter values, one of which is the null `theta_0`.
///
/// Infima over the parameter space are taken as minima over these points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamGrid {
    points: Vec<Vec<f64>>,
    null_index: usize,
    q: usize,
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

impl ParamGrid {
    pub fn new(points: Vec<Vec<f64>>, null_index: usize) -> Result<Self> {
        let Some(first) = points.first() else {
            return Err(Error::Grid("grid has no points".into()));
        };
        let q = first.len();
        if q == 0 {
            return Err(Error::Grid("parameter dimension must be at least 1".into()));
        }
        if null_index >= points.len() {
            return Err(Error::Grid(format!(
                "null_index {null_index} out of range for {} points",
                points.len()
            )));
        }
        for (i, p) in points.iter().enumerate() {
            if p.len() != q {
                return Err(Error::Grid(format!(
                    "point {i} has dimension {}, expected {q}",
                    p.len()
                )));
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::Grid(format!("point {i} is not finite")));
            }
        }
        let mut order: Vec<usize> = (0..points.len()).collect();
        order.sort_by(|&a, &b| lex_cmp(&points[a], &points[b]));
        for w in order.windows(2) {
            if points[w[0]] == points[w[1]] {
                return Err(Error::Grid(format!(
                    "points {} and {} coincide",
                    w[0].min(w[1]),
                    w[0].max(w[1])
                )));
            }
        }
        Ok(Self {
            points,
            null_index,
            q,
        })
    }

    /// Cartesian product of per-coordinate axes (first coordinate varies slowest).
    /// The null is the product point closest to `null`, which must lie within
    /// `1e-9` of it in every coordinate.
    pub fn rectangular(axes: &[Vec<f64>], null: &[f64]) -> Result<Self> {
        if axes.is_empty() || axes.iter().any(|a| a.is_empty()) {
            return Err(Error::Grid("every axis needs at least one value".into()));
        }
        if null.len() != axes.len() {
            return Err(Error::Grid(format!(
                "null has dimension {}, grid has {} axes",
                null.len(),
                axes.len()
            )));
        }
        let mut null_pos = Vec::with_capacity(axes.len());
        for (j, (axis, &v)) in axes.iter().zip(null).enumerate() {
            let pos = axis
                .iter()
                .position(|a| (a - v).abs() <= 1e-9 * (1.0 + v.abs()))
                .ok_or_else(|| Error::Grid(format!("null value {v} is not on axis {j}")))?;
            null_pos.push(pos);
        }
        let total: usize = axes.iter().map(Vec::len).product();
        let mut points = Vec::with_capacity(total);
        let mut idx = vec![0usize; axes.len()];
        let mut null_index = 0;
        for n in 0..total {
            if idx == null_pos {
                null_index = n;
            }
            points.push(idx.iter().zip(axes).map(|(&i, a)| a[i]).collect());
            for j in (0..axes.len()).rev() {
                idx[j] += 1;
                if idx[j] < axes[j].len() {
                    break;
                }
                idx[j] = 0;
            }
        }
        Self::new(points, null_index)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn null_index(&self) -> usize {
        self.null_index
    }

    pub fn null_point(&self) -> &[f64] {
        &self.points[self.null_index]
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i]
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    /// Same points, different null.
    pub fn with_null(&self, null_index: usize) -> Result<Self> {
        if null_index >= self.len() {
            return Err(Error::Grid(format!("null_index {null_index} out of range")));
        }
        Ok(Self {
            points: self.points.clone(),
            null_index,
            q: self.q,
        })
    }

    /// Index of the point within `tol` (max-norm) of `theta`, if any.
    pub fn find(&self, theta: &[f64], tol: f64) -> Option<usize> {
        self.points.iter().position(|p| {
            p.len() == theta.len() && p.iter().zip(theta).all(|(a, b)| (a - b).abs() <= tol)
        })
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# null_index={}", self.null_index)?;
        for p in &self.points {
            let row: Vec<String> = p.iter().map(|v| format!("{v}")).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut null_index = None;
        let mut points = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some(v) = rest.trim().strip_prefix("null_index=") {
                    null_index = Some(v.trim().parse::<usize>().map_err(|_| {
                        Error::Grid(format!("line {}: bad null_index '{v}'", lineno + 1))
                    })?);
                }
                continue;
            }
            let row = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Grid(format!("line {}: {e}", lineno + 1)))?;
            points.push(row);
        }
        let null_index =
            null_index.ok_or_else(|| Error::Grid("missing '# null_index=<i>' header".into()))?;
        Self::new(points, null_index)
    }
}

/// `n` evenly spaced values from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|i| {
                if i == n - 1 {
                    hi
                } else {
                    lo + (hi - lo) * i as f64 / (n - 1) as f64
                }
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_duplicates_and_bad_null() {
        assert!(ParamGrid::new(vec![vec![0.0], vec![0.0]], 0).is_err());
        assert!(ParamGrid::new(vec![vec![0.0]], 1).is_err());
        assert!(ParamGrid::new(vec![], 0).is_err());
        assert!(ParamGrid::new(vec![vec![]], 0).is_err());
        assert!(ParamGrid::new(vec![vec![0.0]], 0).is_ok());
    }

    #[test]
    fn rectangular_finds_null() {
        let g = ParamGrid::rectangular(&[vec![0.0, 1.0], vec![5.0, 6.0, 7.0]], &[1.0, 6.0])
            .unwrap();
        assert_eq!(g.len(), 6);
        assert_eq!(g.null_point(), &[1.0, 6.0]);
        assert_eq!(g.point(0), &[0.0, 5.0]);
        assert_eq!(g.point(1), &[0.0, 6.0]);
    }

    #[test]
    fn csv_round_trip() {
        let g = ParamGrid::rectangular(&[linspace(0.6, 1.1, 6), linspace(-6.0, 60.0, 4)], &[1.0, 16.0])
            .unwrap();
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# null_index="));
        let back = ParamGrid::read_csv(&buf[..]).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn csv_requires_header() {
        assert!(ParamGrid::read_csv("1.0\n2.0\n".as_bytes()).is_err());
    }
}
