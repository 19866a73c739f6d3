//! Run configuration: defaults, config files and flags, merged in that order.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use condinf::gmm::ProfileRule;
use condinf::inference::Calibration;
use condinf::montecarlo::Margins;
use condinf::quantile_iv::Kernel;
use condinf::{Error, StatKind};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// `lo:hi:step` along one coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisSpec {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl AxisSpec {
    pub fn values(&self) -> Result<Vec<f64>, Error> {
        if !(self.step > 0.0) || !(self.hi >= self.lo) || !self.lo.is_finite() || !self.hi.is_finite() {
            return Err(Error::Grid(format!(
                "grid axis {}:{}:{} needs lo <= hi and step > 0",
                self.lo, self.hi, self.step
            )));
        }
        let n = ((self.hi - self.lo) / self.step + 1e-9).floor() as usize + 1;
        if n > 100_000 {
            return Err(Error::Grid(format!("grid axis has {n} points")));
        }
        Ok((0..n).map(|i| self.lo + self.step * i as f64).collect())
    }
}

impl FromStr for AxisSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::Grid(format!("grid axis '{s}' must look like lo:hi:step"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let v: Vec<f64> = parts
            .iter()
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            lo: v[0],
            hi: v[1],
            step: v[2],
        })
    }
}

/// Comma separated axes, e.g. `0.6:1.1:0.05,-6:60:3`.
pub fn parse_grid(s: &str) -> Result<Vec<AxisSpec>, Error> {
    s.split(',').map(AxisSpec::from_str).collect()
}

pub fn parse_list(s: &str, field: &str) -> Result<Vec<f64>, Error> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::Invalid(format!("{field}: cannot parse '{v}'")))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Model {
    Euler,
    Qiv,
}

impl FromStr for Model {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "euler" => Ok(Model::Euler),
            "qiv" => Ok(Model::Qiv),
            other => Err(Error::Invalid(format!("model: unknown model '{other}' (euler or qiv)"))),
        }
    }
}

/// Values that can come from a config file or flags; `None` means unset.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialConfig {
    pub model: Option<Model>,
    pub statistic: Option<String>,
    pub statistics: Option<Vec<String>>,
    pub calibration: Option<Calibration>,
    pub alpha: Option<f64>,
    pub n_draws: Option<usize>,
    pub seed: Option<u64>,
    pub grid: Option<Vec<AxisSpec>>,
    pub null: Option<Vec<f64>>,
    pub data: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub jk_split: Option<[f64; 2]>,
    pub hac_lags: Option<usize>,
    pub bandwidth: Option<f64>,
    pub kernel: Option<Kernel>,
    pub tau: Option<f64>,
    pub epsilon: Option<f64>,
    pub reps: Option<usize>,
    pub profile: Option<ProfileRule>,
    pub rho: Option<f64>,
    pub pis: Option<Vec<f64>>,
    pub n: Option<usize>,
    pub k: Option<usize>,
    pub gammas: Option<[f64; 4]>,
    pub margins: Option<Margins>,
    pub alternatives: Option<AxisSpec>,
    pub q: Option<usize>,
    pub scale: Option<f64>,
}

macro_rules! overlay {
    ($base:expr, $top:expr, $($f:ident),*) => {
        $( if $top.$f.is_some() { $base.$f = $top.$f.clone(); } )*
    };
}

impl PartialConfig {
    /// Reads a JSON (`.json`) or TOML (anything else) config file.
    pub fn from_file(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        if is_json {
            serde_json::from_str(&text)
                .map_err(|e| Error::Invalid(format!("config {}: {e}", path.display())))
        } else {
            toml::from_str(&text).map_err(|e| Error::Invalid(format!("config {}: {e}", path.display())))
        }
    }

    /// `self` with every field set in `top` replaced.
    pub fn overlay(mut self, top: &PartialConfig) -> Self {
        overlay!(
            self, top, model, statistic, statistics, calibration, alpha, n_draws, seed, grid,
            null, data, output, jk_split, hac_lags, bandwidth, kernel, tau, epsilon, reps,
            profile, rho, pis, n, k, gammas, margins, alternatives, q, scale
        );
        self
    }
}

/// Effective configuration after merging; echoed next to the outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub command: String,
    pub model: Model,
    pub statistic: StatKind,
    pub statistics: Vec<String>,
    pub calibration: Calibration,
    pub alpha: f64,
    pub n_draws: usize,
    pub seed: u64,
    pub grid: Vec<AxisSpec>,
    pub null: Option<Vec<f64>>,
    pub data: Option<PathBuf>,
    #[serde(skip)]
    pub output: PathBuf,
    pub jk_split: [f64; 2],
    pub hac_lags: usize,
    pub bandwidth: Option<f64>,
    pub kernel: Kernel,
    pub tau: f64,
    pub epsilon: f64,
    pub reps: usize,
    pub profile: Option<ProfileRule>,
    pub rho: f64,
    pub pis: Vec<f64>,
    pub n: usize,
    pub k: usize,
    pub gammas: [f64; 4],
    pub margins: Margins,
    pub alternatives: Option<AxisSpec>,
    pub q: usize,
    pub scale: f64,
}

fn axis(lo: f64, hi: f64, step: f64) -> AxisSpec {
    AxisSpec { lo, hi, step }
}

impl RunConfig {
    /// Fills unset values with per-command defaults and validates the result.
    pub fn resolve(command: &str, p: PartialConfig) -> Result<Self, Error> {
        let model = p.model.unwrap_or(match command {
            "qiv" | "simulate-size" | "simulate-power" => Model::Qiv,
            _ => Model::Euler,
        });
        let default_grid = match (command, model) {
            ("strong-id", _) => vec![],
            (_, Model::Euler) if p.profile.is_some() => vec![axis(-6.0, 60.0, 1.0)],
            (_, Model::Euler) => vec![axis(0.6, 1.1, 0.025), axis(-6.0, 60.0, 3.0)],
            (_, Model::Qiv) => vec![axis(-1.0, 3.0, 0.1)],
        };
        let alpha = p.alpha.unwrap_or(match model {
            Model::Euler if command != "strong-id" => 0.10,
            _ => 0.05,
        });
        let statistic = match &p.statistic {
            Some(s) => StatKind::from_str(s).map_err(|e| Error::Invalid(format!("statistic: {e}")))?,
            None => StatKind::Qlr,
        };
        let cfg = RunConfig {
            command: command.to_string(),
            model,
            statistic,
            statistics: p
                .statistics
                .unwrap_or_else(|| ["ar", "k", "jk", "qlr"].map(String::from).to_vec()),
            calibration: p.calibration.unwrap_or(Calibration::Conditional),
            alpha,
            n_draws: p.n_draws.unwrap_or(1000),
            seed: p.seed.unwrap_or(1),
            grid: p.grid.unwrap_or(default_grid),
            null: p.null,
            data: p.data,
            output: p.output.unwrap_or_else(|| PathBuf::from("condinf-out")),
            jk_split: p.jk_split.unwrap_or([0.8 * alpha, 0.2 * alpha]),
            hac_lags: p.hac_lags.unwrap_or(1),
            bandwidth: p.bandwidth,
            kernel: p.kernel.unwrap_or(Kernel::Gaussian),
            tau: p.tau.unwrap_or(0.5),
            epsilon: p.epsilon.unwrap_or(0.0),
            reps: p.reps.unwrap_or(match command {
                "simulate-power" => 1000,
                _ => 2000,
            }),
            profile: p.profile,
            rho: p.rho.unwrap_or(0.25),
            pis: p.pis.unwrap_or_else(|| vec![0.02, 0.1, 0.4]),
            n: p.n.unwrap_or(1000),
            k: p.k.unwrap_or(5),
            gammas: p.gammas.unwrap_or([1.0; 4]),
            margins: p.margins.unwrap_or_default(),
            alternatives: p.alternatives,
            q: p.q.unwrap_or(1),
            scale: p.scale.unwrap_or(50.0),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), Error> {
        let bad = |field: &str, msg: String| Err(Error::Invalid(format!("{field}: {msg}")));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha", format!("must lie in (0,1), got {}", self.alpha));
        }
        if self.n_draws < condinf::condcrit::MIN_DRAWS {
            return bad(
                "n_draws",
                format!("must be at least {}, got {}", condinf::condcrit::MIN_DRAWS, self.n_draws),
            );
        }
        if self.command != "strong-id" && self.grid.is_empty() {
            return bad("grid", "must have at least one axis".into());
        }
        for a in &self.grid {
            a.values()?;
        }
        let [ak, aj] = self.jk_split;
        if !(ak > 0.0 && aj > 0.0) || (ak + aj - self.alpha).abs() > 1e-9 {
            return bad("jk_split", format!("({ak}, {aj}) must be positive and sum to alpha"));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return bad("tau", format!("must lie in (0,1), got {}", self.tau));
        }
        if let Some(b) = self.bandwidth {
            if !(b > 0.0) {
                return bad("bandwidth", format!("must be positive, got {b}"));
            }
        }
        if self.reps == 0 {
            return bad("reps", "must be positive".into());
        }
        if !(self.epsilon >= 0.0) {
            return bad("epsilon", format!("must be non-negative, got {}", self.epsilon));
        }
        if self.pis.is_empty() {
            return bad("pis", "needs at least one value".into());
        }
        if !(1..=2).contains(&self.q) {
            return bad("q", format!("must be 1 or 2, got {}", self.q));
        }
        for s in &self.statistics {
            crate::commands::parse_tester_name(s)?;
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form. The output directory is not part of it.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}
