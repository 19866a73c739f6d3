//! Linear quantile regression: minimize `sum_t rho_tau(r_t - c_t' beta)`.
//!
//! One regressor is solved exactly as a weighted quantile. With more
//! regressors, iteratively reweighted least squares on a smoothed check
//! function (smoothing annealed toward zero) supplies a starting point, the
//! `p` observations it fits best define a starting vertex, and vertices are
//! exchanged (exact line search along an edge) until the subgradient
//! optimality condition holds.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// `rho_tau(u) = u (tau - 1{u < 0})`.
#[inline]
pub fn check_loss(u: f64, tau: f64) -> f64 {
    if u < 0.0 {
        u * (tau - 1.0)
    } else {
        u * tau
    }
}

/// `(1/T) sum_t rho_tau(r_t - c_t' beta)`.
pub fn objective(r: &[f64], c: &DMatrix<f64>, beta: &[f64], tau: f64) -> f64 {
    let n = r.len();
    let mut acc = 0.0;
    for t in 0..n {
        let mut fit = 0.0;
        for (j, b) in beta.iter().enumerate() {
            fit += c[(t, j)] * b;
        }
        acc += check_loss(r[t] - fit, tau);
    }
    acc / n as f64
}

/// Exact minimizer over `s` of `sum_t rho_tau(u_t - s a_t)`.
///
/// The objective is convex piecewise linear with kinks at `u_t / a_t`; its
/// slope jumps by `|a_t|` at each kink, so the minimizer is the first kink at
/// which the running slope turns non-negative. Returns `None` when every
/// `a_t` is zero.
pub fn line_minimize(u: &[f64], a: &[f64], tau: f64) -> Option<(f64, usize)> {
    let mut kinks: Vec<(f64, f64, usize)> = Vec::with_capacity(u.len());
    let mut slope = 0.0;
    for (t, (&ut, &at)) in u.iter().zip(a).enumerate() {
        if at > 0.0 {
            slope -= tau * at;
            kinks.push((ut / at, at, t));
        } else if at < 0.0 {
            slope -= (1.0 - tau) * -at;
            kinks.push((ut / at, -at, t));
        }
    }
    if kinks.is_empty() {
        return None;
    }
    kinks.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.2.cmp(&y.2)));
    for &(z, w, t) in &kinks {
        slope += w;
        if slope >= 0.0 {
            return Some((z, t));
        }
    }
    let last = kinks[kinks.len() - 1];
    Some((last.0, last.2))
}

/// Limits for [`fit`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub irls_iterations: usize,
    pub max_pivots: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            irls_iterations: 60,
            max_pivots: 10_000,
        }
    }
}

fn irls_start(r: &[f64], c: &DMatrix<f64>, tau: f64, iters: usize) -> Vec<f64> {
    let n = r.len();
    let p = c.ncols();
    let rv = DVector::from_column_slice(r);
    let scale = r.iter().map(|v| v.abs()).sum::<f64>() / n as f64 + 1e-12;
    let mut beta = {
        let ctc = c.tr_mul(c);
        let ctr = c.tr_mul(&rv);
        ctc.cholesky()
            .map(|ch| ch.solve(&ctr))
            .unwrap_or_else(|| DVector::zeros(p))
    };
    let mut eta = scale;
    let shift = tau - 0.5;
    let csum: DVector<f64> = c.row_sum().transpose();
    for it in 0..iters {
        let u = &rv - c * &beta;
        let mut a = DMatrix::zeros(p, p);
        let mut b = csum.clone() * shift;
        for t in 0..n {
            let w = 1.0 / (2.0 * u[t].abs().max(eta));
            let row = c.row(t);
            for i in 0..p {
                b[i] += w * row[i] * r[t];
                for j in 0..p {
                    a[(i, j)] += w * row[i] * row[j];
                }
            }
        }
        match a.cholesky() {
            Some(ch) => beta = ch.solve(&b),
            None => break,
        }
        if it % 4 == 3 {
            eta = (eta * 0.1).max(1e-10 * scale);
        }
    }
    beta.iter().cloned().collect()
}

/// Greedy basis of `p` observations with small residuals and independent rows.
fn initial_basis(u: &[f64], c: &DMatrix<f64>) -> Option<Vec<usize>> {
    let p = c.ncols();
    let mut order: Vec<usize> = (0..u.len()).collect();
    order.sort_by(|&a, &b| u[a].abs().total_cmp(&u[b].abs()).then(a.cmp(&b)));
    let mut basis = Vec::with_capacity(p);
    let mut ortho: Vec<DVector<f64>> = Vec::with_capacity(p);
    for &t in &order {
        let mut v: DVector<f64> = c.row(t).transpose();
        let norm0 = v.norm();
        if norm0 == 0.0 {
            continue;
        }
        for q in &ortho {
            let d = q.dot(&v);
            v -= q * d;
        }
        let nv = v.norm();
        if nv > 1e-8 * norm0 {
            ortho.push(v / nv);
            basis.push(t);
            if basis.len() == p {
                return Some(basis);
            }
        }
    }
    None
}

fn basis_matrix(c: &DMatrix<f64>, basis: &[usize]) -> DMatrix<f64> {
    let p = c.ncols();
    DMatrix::from_fn(p, p, |i, j| c[(basis[i], j)])
}

/// Minimizes `sum_t rho_tau(r_t - c_t' beta)` over `beta`.
pub fn fit(r: &[f64], c: &DMatrix<f64>, tau: f64, opts: &SolverOptions) -> Result<Vec<f64>> {
    let n = r.len();
    let p = c.ncols();
    if c.nrows() != n {
        return Err(Error::Dimension(format!(
            "{} responses but {} regressor rows",
            n,
            c.nrows()
        )));
    }
    if p == 0 {
        return Ok(Vec::new());
    }
    if n < p {
        return Err(Error::Invalid(format!("{n} observations for {p} coefficients")));
    }
    if p == 1 {
        let a: Vec<f64> = c.column(0).iter().cloned().collect();
        let (s, _) = line_minimize(r, &a, tau)
            .ok_or_else(|| Error::Invalid("regressor column is identically zero".into()))?;
        return Ok(vec![s]);
    }

    let start = irls_start(r, c, tau, opts.irls_iterations);
    let rv = DVector::from_column_slice(r);
    let u0 = &rv - c * DVector::from_column_slice(&start);
    let mut basis = initial_basis(u0.as_slice(), c)
        .ok_or_else(|| Error::Invalid("regressor matrix is rank deficient".into()))?;
    let rb = DVector::from_fn(p, |i, _| r[basis[i]]);
    let mut beta = basis_matrix(c, &basis)
        .lu()
        .solve(&rb)
        .ok_or_else(|| Error::Factorization("singular starting basis".into()))?;

    let mut best = (f64::INFINITY, beta.clone());
    for _ in 0..opts.max_pivots {
        let u = &rv - c * &beta;
        let obj = u.iter().map(|v| check_loss(*v, tau)).sum::<f64>() / n as f64;
        if obj < best.0 {
            best = (obj, beta.clone());
        }
        let cb = basis_matrix(c, &basis);
        let lu = cb.clone().lu();
        // g = sum over non-basic observations of psi(u_t) c_t.
        let mut g = DVector::zeros(p);
        for t in 0..n {
            if basis.contains(&t) {
                continue;
            }
            let psi = if u[t] < 0.0 { tau - 1.0 } else { tau };
            g += c.row(t).transpose() * psi;
        }
        let lambda = -cb
            .transpose()
            .lu()
            .solve(&g)
            .ok_or_else(|| Error::Factorization("singular basis".into()))?;
        let tol = 1e-10 * (1.0 + g.amax());
        let mut worst: Option<(usize, f64, f64)> = None;
        for (j, &l) in lambda.iter().enumerate() {
            let (viol, s) = if l < tau - 1.0 - tol {
                (tau - 1.0 - l, 1.0)
            } else if l > tau + tol {
                (l - tau, -1.0)
            } else {
                continue;
            };
            if worst.is_none_or(|w| viol > w.1) {
                worst = Some((j, viol, s));
            }
        }
        let Some((j, _, s)) = worst else {
            return Ok(best.1.iter().cloned().collect());
        };
        let mut e = DVector::zeros(p);
        e[j] = s;
        let d = lu
            .solve(&e)
            .ok_or_else(|| Error::Factorization("singular basis".into()))?;
        let a: Vec<f64> = (0..n)
            .map(|t| if basis.contains(&t) && t != basis[j] { 0.0 } else { c.row(t).dot(&d.transpose()) })
            .collect();
        let Some((step, entering)) = line_minimize(u.as_slice(), &a, tau) else {
            return Ok(best.1.iter().cloned().collect());
        };
        if step <= 0.0 || entering == basis[j] {
            // No progress along this edge; the current vertex is the best found.
            return Ok(best.1.iter().cloned().collect());
        }
        beta += d * step;
        basis[j] = entering;
    }
    Err(Error::NoConvergence {
        iterations: opts.max_pivots,
        objective: best.0,
        best: best.1.iter().cloned().collect(),
    })
}
