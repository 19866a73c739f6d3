//! Moment-model front end and the consumption Euler equation.
//!
//! The Euler moments are `phi_t(delta, gamma) = (delta x_t^{-gamma} R_t - 1) Z_t`
//! with `x_t = C_t / C_{t-1}` and `Z_t = (1, x_{t-1}, R_{t-1})'`.

use std::io::Read;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::concentrate::{concentrated_covariance, LongCovarianceField, ProfilePath};
use crate::condcrit::FixedSupplier;
use crate::covest::{newey_west, MomentPanel};
use crate::error::{Error, Result};
use crate::field::CovarianceField;
use crate::grid::ParamGrid;
use crate::inference::{self, TestSpec};
use crate::linalg;
use crate::process::MomentProcess;
use crate::result::ConfidenceSet;

pub use crate::covest::build_moment_process;

/// Number of Euler moments.
pub const EULER_K: usize = 3;

/// Consumption growth ratios `C_t / C_{t-1}` and gross returns `R_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct EulerData {
    consumption_ratio: Vec<f64>,
    returns: Vec<f64>,
}

impl EulerData {
    pub fn new(consumption_ratio: Vec<f64>, returns: Vec<f64>) -> Result<Self> {
        if consumption_ratio.len() != returns.len() {
            return Err(Error::Dimension(format!(
                "{} consumption ratios but {} returns",
                consumption_ratio.len(),
                returns.len()
            )));
        }
        if consumption_ratio.len() < 3 {
            return Err(Error::Invalid(format!(
                "need at least 3 observations, got {}",
                consumption_ratio.len()
            )));
        }
        if let Some(t) = consumption_ratio.iter().position(|x| !(*x > 0.0) || !x.is_finite()) {
            return Err(Error::Invalid(format!(
                "consumption ratio at row {t} is {}, must be positive",
                consumption_ratio[t]
            )));
        }
        if returns.iter().any(|r| !r.is_finite()) {
            return Err(Error::NonFinite("returns".into()));
        }
        Ok(Self {
            consumption_ratio,
            returns,
        })
    }

    /// From consumption levels and returns; the first row only supplies `C_0`.
    pub fn from_levels(consumption: &[f64], returns: &[f64]) -> Result<Self> {
        if consumption.len() != returns.len() {
            return Err(Error::Dimension(format!(
                "{} consumption levels but {} returns",
                consumption.len(),
                returns.len()
            )));
        }
        if let Some(t) = consumption.iter().position(|c| !(*c > 0.0)) {
            return Err(Error::Invalid(format!(
                "consumption at row {t} is {}, must be positive",
                consumption[t]
            )));
        }
        let ratios = consumption.windows(2).map(|w| w[1] / w[0]).collect();
        Self::new(ratios, returns[1.min(returns.len())..].to_vec())
    }

    /// Reads a CSV with columns `consumption` (levels) and `return` (gross).
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        let find = |name: &str| {
            headers
                .iter()
                .position(|h| h.eq_ignore_ascii_case(name))
                .ok_or_else(|| Error::Invalid(format!("missing column '{name}'")))
        };
        let (ci, ri) = (find("consumption")?, find("return")?);
        let mut cons = Vec::new();
        let mut rets = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let parse = |i: usize| {
                let s = rec.get(i).unwrap_or("");
                s.parse::<f64>()
                    .map_err(|_| Error::Invalid(format!("row {}: cannot parse '{s}'", line + 1)))
            };
            cons.push(parse(ci)?);
            rets.push(parse(ri)?);
        }
        Self::from_levels(&cons, &rets)
    }

    /// Writes the CSV format read by [`EulerData::from_csv`], starting from
    /// consumption level 1.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "consumption,return")?;
        let mut level = 1.0;
        writeln!(w, "{level},{}", 1.0)?;
        for (x, r) in self.consumption_ratio.iter().zip(&self.returns) {
            level *= x;
            writeln!(w, "{level},{r}")?;
        }
        Ok(())
    }

    pub fn consumption_ratio(&self) -> &[f64] {
        &self.consumption_ratio
    }

    pub fn returns(&self) -> &[f64] {
        &self.returns
    }

    pub fn len(&self) -> usize {
        self.returns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.returns.is_empty()
    }

    /// Rows used by the moments (the first ratio only serves as a lag).
    pub fn t_effective(&self) -> usize {
        self.len() - 1
    }

    /// `Z_t = (1, x_{t-1}, R_{t-1})` for effective row `s` (data row `s + 1`).
    pub fn instruments(&self, s: usize) -> [f64; EULER_K] {
        [1.0, self.consumption_ratio[s], self.returns[s]]
    }

    /// `x_t^{-gamma} R_t` for effective row `s`, computed in log space.
    pub fn pricing_kernel_return(&self, s: usize, gamma: f64) -> f64 {
        (-gamma * self.consumption_ratio[s + 1].ln()).exp() * self.returns[s + 1]
    }
}

/// Preference parameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EulerParams {
    pub delta: f64,
    pub gamma: f64,
}

impl EulerParams {
    pub fn new(delta: f64, gamma: f64) -> Result<Self> {
        if !(delta > 0.0) || !gamma.is_finite() {
            return Err(Error::Invalid(format!(
                "need delta > 0 and finite gamma, got ({delta}, {gamma})"
            )));
        }
        Ok(Self { delta, gamma })
    }
}

/// `phi_t(delta, gamma)` for effective row `s`.
pub fn euler_moment(data: &EulerData, s: usize, p: EulerParams) -> [f64; EULER_K] {
    let u = p.delta * data.pricing_kernel_return(s, p.gamma) - 1.0;
    let z = data.instruments(s);
    [u * z[0], u * z[1], u * z[2]]
}

/// Panel of Euler moments over a grid of `(delta, gamma)` points.
pub fn euler_panel(data: &EulerData, grid: Arc<ParamGrid>) -> Result<MomentPanel> {
    if grid.q() != 2 {
        return Err(Error::Dimension(format!(
            "Euler grid must be over (delta, gamma), got q = {}",
            grid.q()
        )));
    }
    for (i, p) in grid.points().iter().enumerate() {
        if !(p[0] > 0.0) {
            return Err(Error::Grid(format!("grid point {i} has delta = {}", p[0])));
        }
    }
    let params: Vec<EulerParams> = grid
        .points()
        .iter()
        .map(|p| EulerParams {
            delta: p[0],
            gamma: p[1],
        })
        .collect();
    MomentPanel::from_fn(grid, EULER_K, data.t_effective(), |s, i| {
        euler_moment(data, s, params[i]).to_vec()
    })
}

/// Moment process and Newey-West field for the joint `(delta, gamma)` problem.
pub fn euler_process(
    data: &EulerData,
    grid: Arc<ParamGrid>,
    hac_lags: usize,
) -> Result<(MomentProcess, Arc<CovarianceField>)> {
    let panel = euler_panel(data, grid)?;
    let g = build_moment_process(&panel)?;
    let field = newey_west(&panel, hac_lags, true)?;
    Ok((g, Arc::new(field)))
}

/// Joint confidence set for `(delta, gamma)` by inverting `spec` over the grid,
/// with common random numbers across candidate nulls.
pub fn euler_confset<R: RngCore + ?Sized>(
    data: &EulerData,
    grid: Arc<ParamGrid>,
    spec: &TestSpec,
    hac_lags: usize,
    rng: &mut R,
) -> Result<ConfidenceSet> {
    let (g, field) = euler_process(data, grid, hac_lags)?;
    let supplier = FixedSupplier { g: &g, field };
    inference::confidence_set(&supplier, spec, true, rng)
}

/// How `delta` is concentrated out at fixed `gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProfileRule {
    /// Solve the constant-instrument moment: `delta_hat = 1 / mean(x^{-gamma} R)`.
    /// The two remaining moments are kept.
    ConstantInstrument,
    /// Minimize the continuously updated objective
    /// `g(delta)' Sigma(delta)^{-1} g(delta)` over `delta` in a bracket.
    /// The concentrated moments are projected on the `k - 1` leading
    /// eigendirections of their covariance.
    Cue,
}

impl std::str::FromStr for ProfileRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "constant-instrument" | "constant" => Ok(ProfileRule::ConstantInstrument),
            "cue" => Ok(ProfileRule::Cue),
            other => Err(Error::Invalid(format!("unknown profile rule '{other}'"))),
        }
    }
}

/// Settings for concentrating `delta` out.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileOptions {
    pub rule: ProfileRule,
    pub hac_lags: usize,
    /// Search bracket for the CUE rule.
    pub delta_range: (f64, f64),
}

impl Default for ProfileOptions {
    fn default() -> Self {
        Self {
            rule: ProfileRule::ConstantInstrument,
            hac_lags: 1,
            delta_range: (0.6, 1.1),
        }
    }
}

/// Concentrated process over a `gamma` grid and the fitted `delta_hat(gamma)`.
#[derive(Debug, Clone)]
pub struct EulerProfile {
    pub g: MomentProcess,
    pub field: Arc<CovarianceField>,
    pub deltas: Vec<f64>,
}

/// Per-row `A_t = x_t^{-gamma} R_t Z_t` and `Z_t` so that `phi_t = delta A_t - Z_t`.
fn linear_parts(data: &EulerData, gamma: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = data.t_effective();
    let mut a = DMatrix::zeros(n, EULER_K);
    let mut z = DMatrix::zeros(n, EULER_K);
    for s in 0..n {
        let m = data.pricing_kernel_return(s, gamma);
        for (r, zr) in data.instruments(s).iter().enumerate() {
            a[(s, r)] = m * zr;
            z[(s, r)] = *zr;
        }
    }
    (a, z)
}

fn nw_matrix(x: &DMatrix<f64>, lags: usize) -> DMatrix<f64> {
    let n = x.nrows();
    let mut c = x.clone();
    for mut col in c.column_iter_mut() {
        let m = col.mean();
        col.add_scalar_mut(-m);
    }
    let t = n as f64;
    let mut s = c.tr_mul(&c) / t;
    for l in 1..=lags.min(n.saturating_sub(1)) {
        let g = c.rows(l, n - l).tr_mul(&c.rows(0, n - l)) / t;
        s += (&g + g.transpose()) * crate::covest::bartlett_weight(l, lags);
    }
    s
}

fn cue_objective(a: &DMatrix<f64>, z: &DMatrix<f64>, delta: f64, lags: usize) -> f64 {
    let phi = a * delta - z;
    let n = phi.nrows() as f64;
    let gbar: Vec<f64> = phi.column_iter().map(|c| c.sum() / n.sqrt()).collect();
    let s = nw_matrix(&phi, lags);
    match linalg::solve_spd(&s, &DMatrix::from_column_slice(gbar.len(), 1, &gbar)) {
        Ok(sol) => gbar.iter().zip(sol.x.iter()).map(|(g, x)| g * x).sum(),
        Err(_) => f64::INFINITY,
    }
}

fn cue_delta(a: &DMatrix<f64>, z: &DMatrix<f64>, lags: usize, range: (f64, f64)) -> f64 {
    let (lo, hi) = range;
    let n = 60;
    let step = (hi - lo) / n as f64;
    let mut best = (lo, f64::INFINITY);
    for i in 0..=n {
        let d = lo + step * i as f64;
        let v = cue_objective(a, z, d, lags);
        if v < best.1 {
            best = (d, v);
        }
    }
    let (mut x0, mut x3) = ((best.0 - step).max(lo), (best.0 + step).min(hi));
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = x3 - r * (x3 - x0);
    let mut x2 = x0 + r * (x3 - x0);
    let mut f1 = cue_objective(a, z, x1, lags);
    let mut f2 = cue_objective(a, z, x2, lags);
    for _ in 0..60 {
        if f1 <= f2 {
            x3 = x2;
            x2 = x1;
            f2 = f1;
            x1 = x3 - r * (x3 - x0);
            f1 = cue_objective(a, z, x1, lags);
        } else {
            x0 = x1;
            x1 = x2;
            f1 = f2;
            x2 = x0 + r * (x3 - x0);
            f2 = cue_objective(a, z, x2, lags);
        }
    }
    let mid = 0.5 * (x0 + x3);
    if cue_objective(a, z, mid, lags) <= best.1 {
        mid
    } else {
        best.0
    }
}

/// Concentrates `delta` out over a grid of `gamma` values.
pub fn euler_profile(
    data: &EulerData,
    gamma_grid: Arc<ParamGrid>,
    opts: &ProfileOptions,
) -> Result<EulerProfile> {
    if gamma_grid.q() != 1 {
        return Err(Error::Dimension("profile grid must be over gamma alone".into()));
    }
    let n = data.t_effective();
    let ng = gamma_grid.len();
    // Long moments kept after profiling and their count.
    let kk = match opts.rule {
        ProfileRule::ConstantInstrument => EULER_K - 1,
        ProfileRule::Cue => EULER_K,
    };
    let kp = kk + 1;
    let mut long = DMatrix::zeros(n, ng * kp);
    let mut deltas = Vec::with_capacity(ng);
    let mut m_hats = Vec::with_capacity(ng);
    for (i, p) in gamma_grid.points().iter().enumerate() {
        let gamma = p[0];
        let (a, z) = linear_parts(data, gamma);
        let abar: Vec<f64> = a.column_iter().map(|c| c.mean()).collect();
        match opts.rule {
            ProfileRule::ConstantInstrument => {
                let delta = 1.0 / abar[0];
                if !delta.is_finite() || delta <= 0.0 {
                    return Err(Error::Singular {
                        index: i,
                        reason: format!("constant-instrument delta is {delta} at gamma = {gamma}"),
                    });
                }
                for s in 0..n {
                    let phi0 = delta * a[(s, 0)] - z[(s, 0)];
                    for r in 0..kk {
                        long[(s, i * kp + r)] = delta * a[(s, r + 1)] - z[(s, r + 1)];
                    }
                    long[(s, i * kp + kk)] = -phi0 / abar[0];
                }
                deltas.push(delta);
                m_hats.push(DMatrix::from_column_slice(kk, 1, &abar[1..]));
            }
            ProfileRule::Cue => {
                let delta = cue_delta(&a, &z, opts.hac_lags, opts.delta_range);
                let phi = &a * delta - &z;
                let w = linalg::spd_inverse(&nw_matrix(&phi, opts.hac_lags))
                    .map_err(|e| Error::Singular {
                        index: i,
                        reason: format!("moment covariance at gamma = {gamma}: {e}"),
                    })?
                    .x;
                let gvec = DVector::from_column_slice(&abar);
                let wg = &w * &gvec;
                let denom = gvec.dot(&wg);
                for s in 0..n {
                    let mut infl = 0.0;
                    for r in 0..kk {
                        long[(s, i * kp + r)] = phi[(s, r)];
                        infl += wg[r] * phi[(s, r)];
                    }
                    long[(s, i * kp + kk)] = -infl / denom;
                }
                deltas.push(delta);
                m_hats.push(DMatrix::from_column_slice(kk, 1, &abar));
            }
        }
    }
    let long_panel = MomentPanel::new(gamma_grid.clone(), kp, long)?;
    let long_field = newey_west(&long_panel, opts.hac_lags, true)?;
    let path = ProfilePath::new(
        gamma_grid.clone(),
        deltas.iter().map(|d| vec![*d]).collect(),
        m_hats,
    )?;
    let long_field = LongCovarianceField::new(long_field, kk, 1)?;
    let field = concentrated_covariance(&long_field, &path)?;
    let scale = 1.0 / (n as f64).sqrt();
    let mut values = vec![0.0; ng * kk];
    for i in 0..ng {
        for r in 0..kk {
            values[i * kk + r] = long_panel.data().column(i * kp + r).sum() * scale;
        }
    }
    let g = MomentProcess::new(gamma_grid.clone(), values, kk, n)?;
    let (g, field) = match opts.rule {
        ProfileRule::ConstantInstrument => (g, field),
        ProfileRule::Cue => project_leading(&g, &field, kk - 1)?,
    };
    Ok(EulerProfile {
        g,
        field: Arc::new(field),
        deltas,
    })
}

/// Maps `g(theta_i)` to `P_i g(theta_i)` with `P_i` the `r` leading
/// eigenvectors of `Sigma(theta_i, theta_i)`, and the field accordingly.
pub fn project_leading(
    g: &MomentProcess,
    field: &CovarianceField,
    r: usize,
) -> Result<(MomentProcess, CovarianceField)> {
    let grid = g.grid().clone();
    let k = g.k();
    let n = grid.len();
    let mut sel = DMatrix::zeros(n * r, n * k);
    let mut values = vec![0.0; n * r];
    for i in 0..n {
        let eig = SymmetricEigen::new(field.block(i, i));
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|a, b| eig.eigenvalues[*b].total_cmp(&eig.eigenvalues[*a]));
        for (row, &c) in order.iter().take(r).enumerate() {
            let v = eig.eigenvectors.column(c);
            // Fix the sign so the projection is a deterministic function of the block.
            let flip = if v.iter().fold(0.0, |m: f64, x| if x.abs() > m.abs() { *x } else { m }) < 0.0 {
                -1.0
            } else {
                1.0
            };
            let gi = g.value(i);
            let mut acc = 0.0;
            for j in 0..k {
                sel[(i * r + row, i * k + j)] = flip * v[j];
                acc += flip * v[j] * gi[j];
            }
            values[i * r + row] = acc;
        }
    }
    let assembled = &sel * field.assembled() * sel.transpose();
    Ok((
        MomentProcess::new(grid.clone(), values, r, g.t())?,
        CovarianceField::from_assembled(grid, r, assembled)?.with_lambda_bar(field.lambda_bar()),
    ))
}

/// Confidence set for `gamma` with `delta` concentrated out.
pub fn euler_profile_confset<R: RngCore + ?Sized>(
    data: &EulerData,
    gamma_grid: Arc<ParamGrid>,
    opts: &ProfileOptions,
    spec: &TestSpec,
    rng: &mut R,
) -> Result<ConfidenceSet> {
    let prof = euler_profile(data, gamma_grid, opts)?;
    let supplier = FixedSupplier {
        g: &prof.g,
        field: prof.field.clone(),
    };
    inference::confidence_set(&supplier, spec, true, rng)
}

/// Synthetic CRRA economy.
///
/// Log consumption growth follows an AR(1) with mean `growth_mean`,
/// persistence `growth_ar` and innovation sd `growth_sd`. Returns satisfy
/// `log R_t = -log delta + gamma log x_t + v_t - s^2/2` with independent
/// `v_t ~ N(0, s^2)`, `s = return_noise`, so the Euler moments hold exactly
/// for any instrument dated `t-1`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CrraDesign {
    pub delta: f64,
    pub gamma: f64,
    pub growth_mean: f64,
    pub growth_ar: f64,
    pub growth_sd: f64,
    pub return_noise: f64,
    /// Number of consumption ratios generated.
    pub t: usize,
}

impl Default for CrraDesign {
    fn default() -> Self {
        Self {
            delta: 0.97,
            gamma: 1.3,
            growth_mean: 0.02,
            growth_ar: 0.3,
            growth_sd: 0.03,
            return_noise: 0.15,
            t: 400,
        }
    }
}

impl CrraDesign {
    pub fn validate(&self) -> Result<()> {
        EulerParams::new(self.delta, self.gamma)?;
        if !(self.growth_ar.abs() < 1.0) {
            return Err(Error::Invalid("growth_ar must lie in (-1, 1)".into()));
        }
        if !(self.growth_sd >= 0.0 && self.return_noise >= 0.0) {
            return Err(Error::Invalid("standard deviations must be non-negative".into()));
        }
        if self.t < 3 {
            return Err(Error::Invalid("t must be at least 3".into()));
        }
        Ok(())
    }

    pub fn generate<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<EulerData> {
        self.validate()?;
        let burn = 50;
        let sd0 = self.growth_sd / (1.0 - self.growth_ar * self.growth_ar).sqrt();
        let mut lx = self.growth_mean + sd0 * rng.sample::<f64, _>(StandardNormal);
        let mut ratios = Vec::with_capacity(self.t);
        let mut returns = Vec::with_capacity(self.t);
        let s2 = self.return_noise * self.return_noise;
        for step in 0..burn + self.t {
            let e: f64 = rng.sample(StandardNormal);
            let v: f64 = rng.sample(StandardNormal);
            lx = self.growth_mean + self.growth_ar * (lx - self.growth_mean) + self.growth_sd * e;
            if step >= burn {
                let lr = -self.delta.ln() + self.gamma * lx + self.return_noise * v - 0.5 * s2;
                ratios.push(lx.exp());
                returns.push(lr.exp());
            }
        }
        EulerData::new(ratios, returns)
    }
}

/// Rectangular `(delta, gamma)` grid from two axes, with `truth` inserted
/// into each axis when missing and used as the null.
pub fn euler_grid(delta_axis: &[f64], gamma_axis: &[f64], null: [f64; 2]) -> Result<ParamGrid> {
    let insert = |axis: &[f64], v: f64| {
        let mut a = axis.to_vec();
        if !a.iter().any(|x| (x - v).abs() <= 1e-9 * v.abs().max(1.0)) {
            a.push(v);
            a.sort_by(f64::total_cmp);
        }
        a
    };
    ParamGrid::rectangular(
        &[insert(delta_axis, null[0]), insert(gamma_axis, null[1])],
        &null,
    )
}
