//! `condinf`: conditional identification-robust tests, confidence sets and
//! Monte Carlo experiments from the command line.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use condinf::Error;

use config::{parse_grid, parse_list, AxisSpec, PartialConfig, RunConfig};

#[derive(Parser)]
#[command(name = "condinf", version, about = "Conditional QLR and related identification-robust inference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Test one null value.
    Test,
    /// Confidence set by test inversion over the grid.
    Confset,
    /// Rejection rates at the true value in the quantile-IV design.
    SimulateSize,
    /// Rejection rates over alternatives in the quantile-IV design.
    SimulatePower,
    /// Distribution of QLR and its critical values under strong identification.
    StrongId,
    /// Euler-equation confidence set (joint, or for gamma with --profile).
    Euler,
    /// Quantile-IV test at the null and confidence set over the grid.
    Qiv,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Test => "test",
            Command::Confset => "confset",
            Command::SimulateSize => "simulate-size",
            Command::SimulatePower => "simulate-power",
            Command::StrongId => "strong-id",
            Command::Euler => "euler",
            Command::Qiv => "qiv",
        }
    }
}

#[derive(Args, Default)]
struct Flags {
    /// JSON or TOML config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// euler or qiv.
    #[arg(long, global = true)]
    model: Option<String>,
    /// qlr, s (alias ar), k, jk or qlr-weighted.
    #[arg(long = "stat", global = true)]
    statistic: Option<String>,
    /// Statistics for experiments, e.g. ar,k,jk,qlr or k:conditional.
    #[arg(long = "stats", global = true)]
    statistics: Option<String>,
    /// conditional or chi2.
    #[arg(long, global = true)]
    calibration: Option<String>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Simulation draws for conditional critical values.
    #[arg(long = "draws", global = true)]
    n_draws: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Axes as lo:hi:step, comma separated.
    #[arg(long, global = true, allow_hyphen_values = true)]
    grid: Option<String>,
    /// Null value, comma separated per coordinate.
    #[arg(long, global = true, allow_hyphen_values = true)]
    null: Option<String>,
    /// Input CSV.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Output directory.
    #[arg(long = "out", global = true)]
    output: Option<PathBuf>,
    /// alpha_k,alpha_j for JK.
    #[arg(long, global = true)]
    jk_split: Option<String>,
    #[arg(long, global = true)]
    hac_lags: Option<usize>,
    #[arg(long, global = true)]
    bandwidth: Option<f64>,
    /// gaussian, uniform or epanechnikov.
    #[arg(long, global = true)]
    kernel: Option<String>,
    #[arg(long, global = true)]
    tau: Option<f64>,
    /// Critical value inflation.
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    #[arg(long, global = true)]
    reps: Option<usize>,
    /// Concentrate delta out of the Euler model: constant-instrument or cue.
    #[arg(long, global = true)]
    profile: Option<String>,
    #[arg(long, global = true)]
    rho: Option<f64>,
    /// Identification strengths, comma separated.
    #[arg(long = "pi", global = true)]
    pis: Option<String>,
    #[arg(long, global = true)]
    n: Option<usize>,
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Alternatives for simulate-power as lo:hi:step.
    #[arg(long, global = true, allow_hyphen_values = true)]
    alternatives: Option<String>,
    /// Dimension of theta for strong-id.
    #[arg(long, global = true)]
    q: Option<usize>,
    /// Divergence scale for strong-id.
    #[arg(long, global = true)]
    scale: Option<f64>,
    /// Worker threads.
    #[arg(long, global = true, env = "CONDINF_THREADS")]
    threads: Option<usize>,
}

fn parse_named<T: std::str::FromStr<Err = Error>>(v: &Option<String>) -> Result<Option<T>, Error> {
    v.as_deref().map(str::parse).transpose()
}

impl Flags {
    fn to_partial(&self) -> Result<PartialConfig, Error> {
        let jk = match &self.jk_split {
            Some(s) => {
                let v = parse_list(s, "jk_split")?;
                if v.len() != 2 {
                    return Err(Error::Invalid("jk_split: needs two values".into()));
                }
                Some([v[0], v[1]])
            }
            None => None,
        };
        Ok(PartialConfig {
            model: parse_named(&self.model)?,
            statistic: self.statistic.clone(),
            statistics: self
                .statistics
                .as_ref()
                .map(|s| s.split(',').map(|x| x.trim().to_string()).collect()),
            calibration: parse_named(&self.calibration)?,
            alpha: self.alpha,
            n_draws: self.n_draws,
            seed: self.seed,
            grid: self.grid.as_deref().map(parse_grid).transpose()?,
            null: self.null.as_deref().map(|s| parse_list(s, "null")).transpose()?,
            data: self.data.clone(),
            output: self.output.clone(),
            jk_split: jk,
            hac_lags: self.hac_lags,
            bandwidth: self.bandwidth,
            kernel: parse_named(&self.kernel)?,
            tau: self.tau,
            epsilon: self.epsilon,
            reps: self.reps,
            profile: parse_named(&self.profile)?,
            rho: self.rho,
            pis: self.pis.as_deref().map(|s| parse_list(s, "pi")).transpose()?,
            n: self.n,
            k: self.k,
            gammas: None,
            margins: None,
            alternatives: self.alternatives.as_deref().map(str::parse::<AxisSpec>).transpose()?,
            q: self.q,
            scale: self.scale,
        })
    }
}

fn run(cli: &Cli) -> Result<String, Error> {
    let file = match &cli.flags.config {
        Some(p) => PartialConfig::from_file(p)?,
        None => PartialConfig::default(),
    };
    let merged = file.overlay(&cli.flags.to_partial()?);
    let command = cli.command.name();
    let cfg = RunConfig::resolve(command, merged)?;
    if let Some(t) = cli.flags.threads {
        if t == 0 {
            return Err(Error::Invalid("threads: must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::Invalid(format!("threads: {e}")))?;
    }
    match cli.command {
        Command::Test => commands::run_test(&cfg),
        Command::Confset => commands::run_confset(&cfg),
        Command::SimulateSize => commands::run_simulate_size(&cfg),
        Command::SimulatePower => commands::run_simulate_power(&cfg),
        Command::StrongId => commands::run_strong_id(&cfg),
        Command::Euler => commands::run_euler(&cfg),
        Command::Qiv => commands::run_qiv(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(line) => {
            println!("{line}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                ExitCode::from(3)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
