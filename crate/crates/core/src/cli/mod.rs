//! Command-line interface: `simulate`, `fit`, `predict` and `compare`.

pub mod io;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::info;

use crate::inference::{fit, FitResult, InferenceError};
use crate::model::{stack, JointModel, ModelConfig, ModelError};
use crate::oracle::{run_mcmc, McmcConfig, OracleError};
use crate::predict::{
    kaplan_meier, model_mean_survival, subject_survival, trajectory, write_curves_csv,
    write_trajectory_csv, PredictError,
};
use crate::simulate::{simulate_joint, SimScenario, SimulationError};

use io::{fmt_num, read_data, write_atomic};

pub const EXIT_PARSE: i32 = 2;
pub const EXIT_SIMULATION: i32 = 3;
pub const EXIT_OPTIMIZER: i32 = 4;
pub const EXIT_NON_FINITE: i32 = 5;
pub const EXIT_ORACLE_GUARD: i32 = 6;
const EXIT_IO: i32 = 1;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn parse(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_PARSE,
            message: message.into(),
        }
    }

    pub fn io(e: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_IO,
            message: e.to_string(),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        Self::parse(e.to_string())
    }
}

impl From<InferenceError> for CliError {
    fn from(e: InferenceError) -> Self {
        let code = match &e {
            InferenceError::Model(_) => EXIT_PARSE,
            InferenceError::NonFinitePosterior => EXIT_NON_FINITE,
            _ => EXIT_OPTIMIZER,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<SimulationError> for CliError {
    fn from(e: SimulationError) -> Self {
        let code = match e {
            SimulationError::InvalidScenario(_) => EXIT_PARSE,
            SimulationError::BisectionFailed { .. } => EXIT_SIMULATION,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        let code = match e {
            OracleError::DimensionTooLarge { .. } => EXIT_ORACLE_GUARD,
            OracleError::InvalidConfig(_) | OracleError::Model(_) => EXIT_PARSE,
            OracleError::DegenerateTarget => EXIT_NON_FINITE,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<PredictError> for CliError {
    fn from(e: PredictError) -> Self {
        Self::parse(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "jointlgm", version, about = "Joint longitudinal and survival models as latent Gaussian models")]
pub struct Cli {
    /// Random seed; overrides the seed in a scenario or sampler file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// More log output; repeat for debug messages.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a dataset and write long.csv, surv.csv and truth.json.
    Simulate {
        /// Scenario JSON; the default template when omitted.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Fit a model and write fit.json, trajectory.csv and run.log.
    Fit {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Survival curves and trajectories from fit.json.
    Predict {
        #[arg(long)]
        fit: PathBuf,
        /// Comma-separated subject ids.
        #[arg(long, value_delimiter = ',')]
        subjects: Vec<String>,
        /// Number of equally spaced prediction times.
        #[arg(long, default_value_t = 101)]
        points: usize,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Fit and sample the same model; report the discrepancy per parameter.
    Compare {
        #[command(flatten)]
        data: DataArgs,
        /// Sampler settings JSON.
        #[arg(long)]
        mcmc: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Longitudinal CSV `id,time,y[,x..]`.
    #[arg(long)]
    pub long: Option<PathBuf>,
    /// Survival CSV `id,time,event[,z..]`.
    #[arg(long)]
    pub surv: Option<PathBuf>,
    /// Model configuration JSON; defaults when omitted.
    #[arg(long)]
    pub model: Option<PathBuf>,
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::parse(format!("{}: {e}", path.display())))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(CliError::io)
}

fn load_model_config(path: Option<&Path>) -> Result<ModelConfig, CliError> {
    match path {
        Some(p) => ModelConfig::from_json(&read_text(p)?)
            .map_err(|e| CliError::parse(format!("{}: {e}", p.display()))),
        None => Ok(ModelConfig::default()),
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        // Fails only when a global pool already exists, e.g. in tests.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::Simulate { scenario, out } => cmd_simulate(scenario.as_deref(), &out, cli.seed),
        Command::Fit { data, out } => cmd_fit(&data, &out),
        Command::Predict {
            fit,
            subjects,
            points,
            out,
        } => cmd_predict(&fit, &subjects, points, &out),
        Command::Compare { data, mcmc, out } => cmd_compare(&data, mcmc.as_deref(), &out, cli.seed),
    }
}

pub fn cmd_simulate(scenario: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let mut sc = match scenario {
        Some(p) => SimScenario::from_json(&read_text(p)?)
            .map_err(|e| CliError::parse(format!("{}: {e}", p.display())))?,
        None => SimScenario::default(),
    };
    if let Some(s) = seed {
        sc.seed = s;
    }
    let sim = simulate_joint(&sc)?;
    ensure_dir(out)?;
    let d = &sim.data;
    write_atomic(&out.join("long.csv"), &io::long_csv(&d.long_names, &d.long_rows)?)?;
    write_atomic(&out.join("surv.csv"), &io::surv_csv(&d.surv_names, &d.surv_rows)?)?;
    let truth = serde_json::to_string_pretty(&sim.truth).map_err(CliError::io)?;
    write_atomic(&out.join("truth.json"), truth.as_bytes())?;
    info!(
        "simulated {} subjects, {} longitudinal rows",
        d.surv_rows.len(),
        d.long_rows.len()
    );
    Ok(())
}

fn load(data: &DataArgs) -> Result<(crate::model::JointData, ModelConfig), CliError> {
    let config = load_model_config(data.model.as_deref())?;
    if data.long.is_none() && data.surv.is_none() {
        return Err(CliError::parse("give --long, --surv or both"));
    }
    let d = read_data(data.long.as_deref(), data.surv.as_deref())?;
    d.validate()?;
    Ok((d, config))
}

pub fn cmd_fit(data: &DataArgs, out: &Path) -> Result<(), CliError> {
    let (d, config) = load(data)?;
    let start = Instant::now();
    let result = fit(&d, &config)?;
    let elapsed = start.elapsed().as_secs_f64();
    ensure_dir(out)?;
    write_atomic(&out.join("fit.json"), result.to_json().as_bytes())?;
    let mut traj = String::from("time,mean,lower,upper\n");
    if let Some(t) = &result.trajectory {
        for i in 0..t.knots.len() {
            let _ = writeln!(
                traj,
                "{},{},{},{}",
                fmt_num(t.knots[i]),
                fmt_num(t.mean[i]),
                fmt_num(t.lower[i]),
                fmt_num(t.upper[i])
            );
        }
    }
    write_atomic(&out.join("trajectory.csv"), traj.as_bytes())?;
    let mut log = format!("fit_seconds {elapsed:.3}\n");
    for g in &result.grids {
        let _ = writeln!(
            log,
            "part {} strategy {} hyperparameters {} points {} evaluations {} log_evidence {}",
            g.part,
            g.strategy,
            g.names.len(),
            g.points.len(),
            g.evaluations,
            g.log_evidence
        );
    }
    write_atomic(&out.join("run.log"), log.as_bytes())?;
    info!("fit finished in {elapsed:.2} s");
    Ok(())
}

fn safe_name(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

pub fn cmd_predict(fit_path: &Path, subjects: &[String], points: usize, out: &Path) -> Result<(), CliError> {
    let text = fs::read_to_string(fit_path)
        .map_err(|e| CliError::parse(format!("{}: {e}", fit_path.display())))?;
    let result = FitResult::from_json(&text)
        .map_err(|e| CliError::parse(format!("{}: {e}", fit_path.display())))?;
    ensure_dir(out)?;
    let rows: Vec<crate::model::SurvRow> = result
        .subjects
        .iter()
        .filter_map(|s| {
            Some(crate::model::SurvRow {
                id: s.id.clone(),
                s: s.time?,
                event: s.event?,
                z: s.surv_covariates.clone(),
            })
        })
        .collect();
    let horizon = rows.iter().map(|r| r.s).fold(0.0, f64::max);
    let n = points.max(2);
    let times: Vec<f64> = (0..n).map(|i| horizon * i as f64 / (n - 1) as f64).collect();
    if !rows.is_empty() {
        let km = kaplan_meier(&rows)?;
        let mean = model_mean_survival(&result, &times)?;
        let mut buf = Vec::new();
        write_curves_csv(&mut buf, &[km]).map_err(CliError::io)?;
        write_atomic(&out.join("kaplan_meier.csv"), &buf)?;
        let mut buf = Vec::new();
        write_curves_csv(&mut buf, &[mean]).map_err(CliError::io)?;
        write_atomic(&out.join("model_mean.csv"), &buf)?;
    }
    for id in subjects {
        let subject = result
            .subject(id)
            .ok_or_else(|| CliError::parse(PredictError::UnknownSubject(id.clone()).to_string()))?;
        if subject.time.is_some() {
            let curve = subject_survival(&result, id, &times)?;
            let mut buf = Vec::new();
            write_curves_csv(&mut buf, &[curve]).map_err(CliError::io)?;
            write_atomic(&out.join(format!("subject_{}.csv", safe_name(id))), &buf)?;
        }
        if let Some(k) = result.model.knots.first().copied() {
            let hi = *result.model.knots.last().expect("non-empty knots");
            let ts: Vec<f64> = (0..n).map(|i| k + (hi - k) * i as f64 / (n - 1) as f64).collect();
            let pts = trajectory(&result, id, &ts)?;
            let mut buf = Vec::new();
            write_trajectory_csv(&mut buf, id, &pts).map_err(CliError::io)?;
            write_atomic(&out.join(format!("trajectory_{}.csv", safe_name(id))), &buf)?;
        }
    }
    Ok(())
}

pub fn cmd_compare(data: &DataArgs, mcmc: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let (d, config) = load(data)?;
    let mut mc = match mcmc {
        Some(p) => serde_json::from_str::<McmcConfig>(&read_text(p)?)
            .map_err(|e| CliError::parse(format!("{}: {e}", p.display())))?,
        None => McmcConfig::default(),
    };
    if let Some(s) = seed {
        mc.seed = s;
    }
    config.validate()?;
    let model = JointModel::from_design(stack(&d, &config)?, &config)?;
    let summary = run_mcmc(&model, &mc)?;
    let result = fit(&d, &config)?;

    let mut report = String::from("parameter,laplace_mean,mcmc_mean,mcmc_sd,mcse,ess,ratio\n");
    let mut line = |name: &str, laplace: f64, p: &crate::oracle::ParamSummary| {
        let _ = writeln!(
            report,
            "{name},{},{},{},{},{},{}",
            fmt_num(laplace),
            fmt_num(p.mean),
            fmt_num(p.sd),
            fmt_num(p.mcse),
            fmt_num(p.ess),
            fmt_num((laplace - p.mean).abs() / p.sd)
        );
    };
    for (name, p) in &summary.hyperparameters {
        if let Some(h) = result.hyper(name) {
            line(name, h.mean, p);
        }
    }
    for (block, ps) in &summary.latent {
        for (p, l) in ps.iter().zip(result.latent_block(block)) {
            line(&format!("{block}:{}", p.label), l.mean, p);
        }
    }
    ensure_dir(out)?;
    write_atomic(&out.join("compare.csv"), report.as_bytes())?;
    write_atomic(&out.join("oracle.json"), summary.to_json().as_bytes())?;
    write_atomic(&out.join("fit.json"), result.to_json().as_bytes())?;
    print!("{report}");
    Ok(())
}
