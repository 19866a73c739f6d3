use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use condinf::condcrit::TestOptions;
use condinf::gmm::{self, EulerData, ProfileOptions};
use condinf::inference::{self, Calibration, TestSpec};
use condinf::montecarlo::{
    self, gen_qiv_data, stream_rng, ExperimentOutput, QivScenario, QivSimDesign, StrongIdDesign,
    Tester,
};
use condinf::quantile_iv::{self, Bandwidth, QivOptions, QuantileIVData};
use condinf::stats::WeightField;
use condinf::{ConfidenceSet, Error, ParamGrid, StatKind, TestResult};
use serde::Serialize;

use crate::config::{Model, RunConfig};

type Result<T> = std::result::Result<T, Error>;

/// Synthetic Euler data shipped with the binary (CRRA economy at
/// `delta = 0.97`, `gamma = 1.3`, 400 periods).
pub const PACKAGED_EULER: &str = include_str!("../data/euler_synthetic.csv");

/// `name` or `name:calibration`; `ar` is S with chi-square calibration, and K
/// and JK default to chi-square.
pub fn parse_tester_name(s: &str) -> Result<(StatKind, Calibration)> {
    let (name, cal) = match s.split_once(':') {
        Some((n, c)) => (n, Some(c.parse::<Calibration>()?)),
        None => (s, None),
    };
    let (stat, default_cal) = match name {
        "ar" => (StatKind::S, Calibration::Chi2),
        other => {
            let k: StatKind = other.parse()?;
            let c = match k {
                StatKind::K | StatKind::Jk => Calibration::Chi2,
                _ => Calibration::Conditional,
            };
            (k, c)
        }
    };
    Ok((stat, cal.unwrap_or(default_cal)))
}

/// Writes CSV files with the config-hash line first.
pub struct Outputs {
    dir: PathBuf,
    hash: String,
    pub written: Vec<PathBuf>,
}

impl Outputs {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        fs::create_dir_all(&cfg.output)?;
        let out = Self {
            dir: cfg.output.clone(),
            hash: cfg.hash(),
            written: Vec::new(),
        };
        Ok(out)
    }

    pub fn csv(&mut self, name: &str, body: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<PathBuf> {
        let path = self.dir.join(name);
        let mut w = BufWriter::new(File::create(&path)?);
        writeln!(w, "# config-hash={}", self.hash)?;
        body(&mut w)?;
        w.flush()?;
        self.written.push(path.clone());
        Ok(path)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let path = self.dir.join(name);
        let text = serde_json::to_string_pretty(value)
            .map_err(|e| Error::Invalid(format!("serializing {name}: {e}")))?;
        fs::write(&path, text + "\n")?;
        self.written.push(path.clone());
        Ok(path)
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }
}

#[derive(Serialize)]
struct EffectiveConfig<'a> {
    config_hash: &'a str,
    config: &'a RunConfig,
}

pub fn write_effective_config(out: &mut Outputs, cfg: &RunConfig) -> Result<()> {
    let hash = out.hash().to_string();
    out.json(
        "effective_config.json",
        &EffectiveConfig {
            config_hash: &hash,
            config: cfg,
        },
    )?;
    Ok(())
}

fn options(cfg: &RunConfig) -> Result<TestOptions> {
    Ok(TestOptions::new(cfg.alpha, cfg.n_draws)?.with_epsilon(cfg.epsilon))
}

fn spec_for(cfg: &RunConfig, stat: StatKind, cal: Calibration, k: usize, grid: &Arc<ParamGrid>) -> Result<TestSpec> {
    let mut spec = TestSpec::new(stat, options(cfg)?)
        .with_calibration(cal)
        .with_jk_split(cfg.jk_split[0], cfg.jk_split[1]);
    if stat == StatKind::QlrWeighted {
        spec = spec.with_weights(WeightField::identity(grid.clone(), k));
    }
    Ok(spec)
}

/// Cartesian grid from the config axes with the null inserted into each axis.
fn build_grid(cfg: &RunConfig, default_null: Option<Vec<f64>>) -> Result<ParamGrid> {
    let mut axes: Vec<Vec<f64>> = cfg.grid.iter().map(|a| a.values()).collect::<Result<_>>()?;
    let null = cfg
        .null
        .clone()
        .or(default_null)
        .unwrap_or_else(|| axes.iter().map(|a| a[0]).collect());
    if null.len() != axes.len() {
        return Err(Error::Invalid(format!(
            "null: has {} coordinates, grid has {}",
            null.len(),
            axes.len()
        )));
    }
    for (a, v) in axes.iter_mut().zip(&null) {
        if !a.iter().any(|x| (x - v).abs() <= 1e-9 * (1.0 + v.abs())) {
            a.push(*v);
            a.sort_by(f64::total_cmp);
        }
    }
    ParamGrid::rectangular(&axes, &null)
}

fn load_euler(cfg: &RunConfig) -> Result<EulerData> {
    match &cfg.data {
        Some(p) => EulerData::from_csv(File::open(p).map_err(|e| io_context(p, e))?),
        None => EulerData::from_csv(PACKAGED_EULER.as_bytes()),
    }
}

fn io_context(p: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("data {}: {e}", p.display())))
}

fn qiv_design(cfg: &RunConfig, pi: f64) -> QivSimDesign {
    QivSimDesign {
        rho: cfg.rho,
        pi,
        gammas: cfg.gammas,
        n: cfg.n,
        k: cfg.k,
        tau: cfg.tau,
        margins: cfg.margins,
    }
}

fn load_qiv(cfg: &RunConfig) -> Result<QuantileIVData> {
    match &cfg.data {
        Some(p) => QuantileIVData::from_csv(File::open(p).map_err(|e| io_context(p, e))?, cfg.tau),
        None => gen_qiv_data(&qiv_design(cfg, cfg.pis[0]), &mut stream_rng(cfg.seed, u64::MAX)),
    }
}

fn qiv_options(cfg: &RunConfig) -> QivOptions {
    QivOptions {
        kernel: cfg.kernel,
        bandwidth: cfg.bandwidth.map_or(Bandwidth::Silverman, Bandwidth::Fixed),
        ..QivOptions::default()
    }
}

/// The moment process and field of the configured model over `grid`.
fn model_process(
    cfg: &RunConfig,
    grid: Arc<ParamGrid>,
) -> Result<(condinf::MomentProcess, Arc<condinf::CovarianceField>)> {
    match cfg.model {
        Model::Euler => {
            let data = load_euler(cfg)?;
            match cfg.profile {
                Some(rule) => {
                    let prof = gmm::euler_profile(
                        &data,
                        grid,
                        &ProfileOptions {
                            rule,
                            hac_lags: cfg.hac_lags,
                            ..ProfileOptions::default()
                        },
                    )?;
                    Ok((prof.g, prof.field))
                }
                None => gmm::euler_process(&data, grid, cfg.hac_lags),
            }
        }
        Model::Qiv => {
            let data = load_qiv(cfg)?;
            let fit = quantile_iv::qiv_fit(&data, grid, &qiv_options(cfg))?;
            Ok((fit.g, fit.field))
        }
    }
}

fn param_names(cfg: &RunConfig) -> Vec<&'static str> {
    match (cfg.model, cfg.profile) {
        (Model::Euler, None) => vec!["delta", "gamma"],
        (Model::Euler, Some(_)) => vec!["gamma"],
        (Model::Qiv, _) => vec!["theta"],
    }
}

#[derive(Serialize)]
struct TestSummary<'a> {
    config_hash: &'a str,
    statistic: String,
    null: Vec<f64>,
    result: &'a TestResult,
}

pub fn run_test(cfg: &RunConfig) -> Result<String> {
    let default_null = match cfg.model {
        Model::Qiv => Some(vec![1.0]),
        Model::Euler => None,
    };
    if cfg.null.is_none() && cfg.model == Model::Euler {
        return Err(Error::Invalid("null: required for the test command".into()));
    }
    let grid = Arc::new(build_grid(cfg, default_null)?);
    let (g, field) = model_process(cfg, grid.clone())?;
    let spec = spec_for(cfg, cfg.statistic, cfg.calibration, g.k(), &grid)?;
    let mut rng = stream_rng(cfg.seed, 0);
    let draws = inference::draws_for(&spec, g.k(), &mut rng);
    let result = inference::run_test(&g, &field, &spec, &draws)?;
    let mut out = Outputs::new(cfg)?;
    write_effective_config(&mut out, cfg)?;
    let hash = out.hash().to_string();
    let path = out.json(
        "test.json",
        &TestSummary {
            config_hash: &hash,
            statistic: cfg.statistic.to_string(),
            null: grid.null_point().to_vec(),
            result: &result,
        },
    )?;
    Ok(format!(
        "{} statistic={:.6} critical_value={:.6} p_value={:.4} decision={} -> {}",
        cfg.statistic,
        result.statistic,
        result.critical_value,
        result.p_value,
        if result.reject { "reject" } else { "accept" },
        path.display()
    ))
}

#[derive(Serialize)]
struct SetSummary<'a> {
    config_hash: &'a str,
    statistic: String,
    level: f64,
    grid_points: usize,
    accepted: usize,
    failed: usize,
    coverage_fraction: f64,
}

fn write_set(cfg: &RunConfig, set: &ConfidenceSet, out: &mut Outputs, name: &str) -> Result<String> {
    let names = param_names(cfg);
    let path = out.csv(name, |w| Ok(set.write_csv(w, &names)?))?;
    let hash = out.hash().to_string();
    out.json(
        "summary.json",
        &SetSummary {
            config_hash: &hash,
            statistic: cfg.statistic.to_string(),
            level: set.level,
            grid_points: set.accepted.len(),
            accepted: set.n_accepted(),
            failed: set.failed.iter().filter(|f| **f).count(),
            coverage_fraction: set.coverage_fraction(),
        },
    )?;
    Ok(format!(
        "{} {:.0}% confidence set: {}/{} grid points accepted ({:.2}% of the grid) -> {}",
        cfg.statistic,
        100.0 * set.level,
        set.n_accepted(),
        set.accepted.len(),
        100.0 * set.coverage_fraction(),
        path.display()
    ))
}

pub fn run_confset(cfg: &RunConfig) -> Result<String> {
    let grid = Arc::new(build_grid(cfg, None)?);
    let (g, field) = model_process(cfg, grid.clone())?;
    let spec = spec_for(cfg, cfg.statistic, cfg.calibration, g.k(), &grid)?;
    let supplier = condinf::condcrit::FixedSupplier { g: &g, field };
    let set = inference::confidence_set(&supplier, &spec, true, &mut stream_rng(cfg.seed, 0))?;
    let mut out = Outputs::new(cfg)?;
    write_effective_config(&mut out, cfg)?;
    write_set(cfg, &set, &mut out, "confset.csv")
}

pub fn run_qiv(cfg: &RunConfig) -> Result<String> {
    let grid = Arc::new(build_grid(cfg, Some(vec![1.0]))?);
    let data = load_qiv(cfg)?;
    let fit = quantile_iv::qiv_fit(&data, grid.clone(), &qiv_options(cfg))?;
    let spec = spec_for(cfg, cfg.statistic, cfg.calibration, data.k(), &grid)?;
    let mut rng = stream_rng(cfg.seed, 0);
    let draws = inference::draws_for(&spec, data.k(), &mut rng);
    let result = inference::run_test(&fit.g, &fit.field, &spec, &draws)?;
    let supplier = condinf::condcrit::FixedSupplier {
        g: &fit.g,
        field: fit.field.clone(),
    };
    let set = inference::confidence_set(&supplier, &spec, true, &mut stream_rng(cfg.seed, 1))?;
    let mut out = Outputs::new(cfg)?;
    write_effective_config(&mut out, cfg)?;
    out.csv("profile.csv", |w| {
        writeln!(w, "theta,beta,bandwidth")?;
        for (i, p) in grid.points().iter().enumerate() {
            let b: Vec<String> = fit.profile.path.betas[i].iter().map(|v| format!("{v}")).collect();
            writeln!(w, "{},{},{}", p[0], b.join(";"), fit.profile.bandwidths[i])?;
        }
        Ok(())
    })?;
    let hash = out.hash().to_string();
    out.json(
        "test.json",
        &TestSummary {
            config_hash: &hash,
            statistic: cfg.statistic.to_string(),
            null: grid.null_point().to_vec(),
            result: &result,
        },
    )?;
    let line = write_set(cfg, &set, &mut out, "confset.csv")?;
    Ok(format!(
        "test at theta={:?}: statistic={:.6} critical_value={:.6} decision={}; {line}",
        grid.null_point(),
        result.statistic,
        result.critical_value,
        if result.reject { "reject" } else { "accept" }
    ))
}

pub fn run_euler(cfg: &RunConfig) -> Result<String> {
    if cfg.model != Model::Euler {
        return Err(Error::Invalid("model: the euler command needs model = euler".into()));
    }
    run_confset(cfg)
}

fn testers(cfg: &RunConfig, k: usize, grid: &Arc<ParamGrid>) -> Result<Vec<TestSpec>> {
    cfg.statistics
        .iter()
        .map(|s| {
            let (stat, cal) = parse_tester_name(s)?;
            spec_for(cfg, stat, cal, k, grid)
        })
        .collect()
}

fn write_experiment(out: &mut Outputs, name: &str, exp: &ExperimentOutput) -> Result<PathBuf> {
    let p = out.csv(name, |w| exp.write_csv(w))?;
    out.csv("failures.csv", |w| exp.write_failures(w))?;
    Ok(p)
}

pub fn run_simulate_size(cfg: &RunConfig) -> Result<String> {
    let mut all = ExperimentOutput::default();
    for (i, &pi) in cfg.pis.iter().enumerate() {
        let scenario = scenario(cfg, pi)?;
        let specs = testers(cfg, cfg.k, &scenario.grid)?;
        let refs: Vec<&dyn Tester> = specs.iter().map(|s| s as &dyn Tester).collect();
        let exp = montecarlo::size_experiment(&scenario, &refs, cfg.reps, cfg.seed.wrapping_add(i as u64))?;
        all.rows.extend(exp.rows);
        all.failures.extend(exp.failures);
    }
    let mut out = Outputs::new(cfg)?;
    write_effective_config(&mut out, cfg)?;
    let path = write_experiment(&mut out, "size.csv", &all)?;
    let cells: Vec<String> = all
        .rows
        .iter()
        .map(|r| format!("{}@{}={:.4}", r.statistic, short_pi(&r.scenario), r.rate))
        .collect();
    Ok(format!("size: {} -> {}", cells.join(" "), path.display()))
}

fn short_pi(label: &str) -> String {
    label
        .split_whitespace()
        .find(|p| p.starts_with("pi="))
        .unwrap_or(label)
        .to_string()
}

fn scenario(cfg: &RunConfig, pi: f64) -> Result<QivScenario> {
    let design = qiv_design(cfg, pi);
    let grid = Arc::new(build_grid(cfg, Some(vec![design.true_theta()]))?);
    design.validate()?;
    Ok(QivScenario {
        design,
        grid,
        options: qiv_options(cfg),
    })
}

pub fn run_simulate_power(cfg: &RunConfig) -> Result<String> {
    let mut all = ExperimentOutput::default();
    for (i, &pi) in cfg.pis.iter().enumerate() {
        let scenario = scenario(cfg, pi)?;
        let grid = scenario.grid.clone();
        let nulls: Vec<usize> = match cfg.alternatives {
            Some(a) => a
                .values()?
                .iter()
                .map(|v| {
                    grid.find(&[*v], 1e-9 * (1.0 + v.abs())).ok_or_else(|| {
                        Error::Grid(format!("alternatives: {v} is not a grid point"))
                    })
                })
                .collect::<Result<_>>()?,
            None => (0..grid.len()).collect(),
        };
        let specs = testers(cfg, cfg.k, &grid)?;
        let refs: Vec<&dyn Tester> = specs.iter().map(|s| s as &dyn Tester).collect();
        let exp = montecarlo::power_curve(&scenario, &refs, &nulls, cfg.reps, cfg.seed.wrapping_add(i as u64))?;
        all.rows.extend(exp.rows);
        all.failures.extend(exp.failures);
    }
    let mut out = Outputs::new(cfg)?;
    write_effective_config(&mut out, cfg)?;
    let path = write_experiment(&mut out, "power.csv", &all)?;
    Ok(format!(
        "power: {} rows ({} failures) -> {}",
        all.rows.len(),
        all.failures.len(),
        path.display()
    ))
}

#[derive(Serialize)]
struct StrongSummary<'a> {
    config_hash: &'a str,
    q: usize,
    scale: f64,
    alpha: f64,
    reps: usize,
    ks_distance: f64,
    ks_critical_1pct: f64,
    chi2_quantile: f64,
    mean_critical_value: f64,
    sd_critical_value: f64,
    rejection_rate: f64,
}

pub fn run_strong_id(cfg: &RunConfig) -> Result<String> {
    let design = StrongIdDesign::standard(cfg.q, cfg.scale)?;
    let r = montecarlo::strong_id_experiment(&design, cfg.alpha, cfg.reps, cfg.n_draws, cfg.seed)?;
    let mut out = Outputs::new(cfg)?;
    write_effective_config(&mut out, cfg)?;
    let path = out.csv("strong_id.csv", |w| r.write_csv(w))?;
    let hash = out.hash().to_string();
    out.json(
        "summary.json",
        &StrongSummary {
            config_hash: &hash,
            q: r.q,
            scale: r.scale,
            alpha: r.alpha,
            reps: cfg.reps,
            ks_distance: r.ks_distance,
            ks_critical_1pct: r.ks_critical_1pct,
            chi2_quantile: r.chi2_quantile,
            mean_critical_value: r.mean_critical_value,
            sd_critical_value: r.sd_critical_value,
            rejection_rate: r.rejection_rate,
        },
    )?;
    Ok(format!(
        "strong-id q={} scale={}: KS={:.4} (1% critical {:.4}), mean critical value {:.3} vs chi2 {:.3} -> {}",
        r.q,
        r.scale,
        r.ks_distance,
        r.ks_critical_1pct,
        r.mean_critical_value,
        r.chi2_quantile,
        path.display()
    ))
}
