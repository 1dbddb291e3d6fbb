//! `flipci` command line.
//!
//! Every command starts its output with a block of `# key = value` lines
//! holding the fully resolved configuration, so a run can be replayed
//! exactly. Exit codes: 0 on success, 2 for input errors, 3 for numerical
//! failures.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};

use crate::baselines::{sandwich_interval, wald_interval};
use crate::deg::{analyze_all, load_covariates, load_expression, write_results, write_summary, DegConfig, GeneStatus};
use crate::flip::{sign_flip_test, Alternative, FlipEnsemble, Statistic};
use crate::glm::{fit_full, DesignSplit, Family};
use crate::inversion::{confint, CiConfig, ConfidenceInterval, FlipMethod};
use crate::report::g9;
use crate::sim::{run_scenario_with, write_rep_log, write_summary_csv, Scenario, ScenarioId, SimConfig};
use crate::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "flipci", version, about = "Sign-flip score test confidence intervals for GLM coefficients")]
pub struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// One-sided sign-flip score test of `beta = beta0`.
    Test(TestArgs),
    /// Confidence interval for the coefficient of `x`.
    Confint(ConfintArgs),
    /// Coverage simulation for one scenario.
    Simulate(SimulateArgs),
    /// Per-gene Poisson vs negative binomial interval comparison.
    Deg(DegArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FamilyArg {
    Gaussian,
    Bernoulli,
    Poisson,
    Negbin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AlternativeArg {
    Greater,
    Less,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Equitailed,
    Symmetric,
    Wald,
    Sandwich,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// CSV with header `y,x,z1,...,zp`; an intercept is added to the z columns.
    #[arg(long)]
    pub data: PathBuf,

    #[arg(long, value_enum, default_value_t = FamilyArg::Gaussian)]
    pub family: FamilyArg,

    /// Negative binomial size (required with --family negbin).
    #[arg(long)]
    pub theta: Option<f64>,

    /// Number of flips, identity included.
    #[arg(long, default_value_t = 1000)]
    pub w: usize,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Use the effective score instead of the standardized one.
    #[arg(long, conflicts_with = "standardized")]
    pub effective: bool,

    /// Use the standardized score (the default).
    #[arg(long)]
    pub standardized: bool,

    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TestArgs {
    #[command(flatten)]
    pub model: ModelArgs,

    #[arg(long, allow_hyphen_values = true)]
    pub beta0: f64,

    #[arg(long, value_enum, default_value_t = AlternativeArg::Greater)]
    pub alternative: AlternativeArg,
}

#[derive(Debug, Clone, Args)]
pub struct ConfintArgs {
    #[command(flatten)]
    pub model: ModelArgs,

    #[arg(long, default_value_t = 0.95)]
    pub level: f64,

    #[arg(long, value_enum, default_value_t = MethodArg::Equitailed)]
    pub method: MethodArg,

    /// Bisection tolerance as a fraction of the initial step.
    #[arg(long, default_value_t = 1.0 / 1024.0)]
    pub tol_fraction: f64,

    /// HC1 small-sample factor for the sandwich method.
    #[arg(long)]
    pub hc1: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// One of lm-correct, logit-correct, pois-correct, negbin-as-pois, hetero-target, hetero-nuisance.
    #[arg(long)]
    pub scenario: String,

    /// Sample size.
    #[arg(long = "N", visible_alias = "n", default_value_t = 50)]
    pub n: usize,

    #[arg(long, default_value_t = 1000)]
    pub reps: usize,

    #[arg(long, default_value_t = 0.95)]
    pub level: f64,

    #[arg(long, default_value_t = 1000)]
    pub w: usize,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    #[arg(long, default_value_t = 1.0 / 1024.0)]
    pub tol_fraction: f64,

    #[arg(long)]
    pub effective: bool,

    #[arg(long)]
    pub hc1: bool,

    #[arg(long, allow_hyphen_values = true, default_value_t = 0.0)]
    pub beta: f64,

    #[arg(long, allow_hyphen_values = true, default_value_t = -0.5)]
    pub gamma: f64,

    #[arg(long, allow_hyphen_values = true, default_value_t = 0.2)]
    pub correlation: f64,

    #[arg(long, allow_hyphen_values = true, default_value_t = 1.0)]
    pub hetero_lambda: f64,

    /// Negative binomial size of negbin-as-pois.
    #[arg(long, default_value_t = 1.0)]
    pub theta: f64,

    /// Summary CSV path (stdout if absent).
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Optional per-replication CSV.
    #[arg(long)]
    pub rep_log: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct DegArgs {
    /// Expression CSV, header `gene_id,<sample ids>`.
    #[arg(long)]
    pub counts: PathBuf,

    /// Covariates CSV, header `sample_id,stage,gender,age[,log_offset]`.
    #[arg(long)]
    pub covariates: PathBuf,

    /// Output directory for results.csv and summary.csv.
    #[arg(long)]
    pub out: PathBuf,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Fixed negative binomial size; estimated per gene when absent.
    #[arg(long)]
    pub theta: Option<f64>,

    #[arg(long, default_value_t = 0.95)]
    pub level: f64,

    #[arg(long, default_value_t = 1000)]
    pub w: usize,

    #[arg(long, default_value_t = 1.0 / 1024.0)]
    pub tol_fraction: f64,

    /// Also compute flip-symmetric intervals.
    #[arg(long)]
    pub symmetric: bool,

    #[arg(long)]
    pub hc1: bool,
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    if let Some(t) = cli.threads {
        if t == 0 {
            eprintln!("error: --threads must be at least 1");
            return EXIT_INPUT;
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            log::warn!("thread pool already initialized: {e}");
        }
    }
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_input_error() {
                EXIT_INPUT
            } else {
                EXIT_NUMERICAL
            }
        }
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Test(args) => cmd_test(args, cli.threads),
        Command::Confint(args) => cmd_confint(args, cli.threads),
        Command::Simulate(args) => cmd_simulate(args, cli.threads),
        Command::Deg(args) => cmd_deg(args, cli.threads),
    }
}

/// Ordered `# key = value` block.
struct Echo(Vec<(&'static str, String)>);

impl Echo {
    fn new(command: &str, threads: Option<usize>) -> Self {
        let threads = threads.map_or("auto".to_string(), |t| t.to_string());
        Echo(vec![("command", command.to_string()), ("threads", threads)])
    }

    fn add(&mut self, key: &'static str, value: impl ToString) -> &mut Self {
        self.0.push((key, value.to_string()));
        self
    }

    fn write(&self, out: &mut dyn Write) -> io::Result<()> {
        for (k, v) in &self.0 {
            writeln!(out, "# {k} = {v}")?;
        }
        Ok(())
    }
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn family_from(arg: FamilyArg, theta: Option<f64>) -> Result<Family> {
    match (arg, theta) {
        (FamilyArg::Gaussian, _) => Ok(Family::Gaussian),
        (FamilyArg::Bernoulli, _) => Ok(Family::Bernoulli),
        (FamilyArg::Poisson, _) => Ok(Family::Poisson),
        (FamilyArg::Negbin, Some(t)) => Family::negative_binomial(t),
        (FamilyArg::Negbin, None) => Err(Error::InvalidInput("--family negbin needs --theta".into())),
    }
}

fn statistic_from(effective: bool) -> Statistic {
    if effective {
        Statistic::Effective
    } else {
        Statistic::Standardized
    }
}

/// Reads `y,x,z1..zp`; returns the response and the design with an intercept.
pub fn load_model_data(path: &Path) -> Result<(DVector<f64>, DesignSplit)> {
    let err = |row: usize, column: usize, message: String| Error::Parse {
        path: path.display().to_string(),
        row,
        column,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header.len() < 2 || header[0] != "y" || header[1] != "x" {
        return Err(err(1, 1, "expected header y,x[,z1,...]".into()));
    }
    let cols = header.len();
    let mut values: Vec<f64> = Vec::new();
    let mut rows = 0;
    for (k, record) in rdr.records().enumerate() {
        let record = record?;
        for (j, cell) in record.iter().enumerate() {
            let v: f64 = cell
                .trim()
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| err(k + 2, j + 1, format!("'{cell}' is not a finite number")))?;
            values.push(v);
        }
        rows += 1;
    }
    let m = DMatrix::from_row_slice(rows, cols, &values);
    let y = m.column(0).into_owned();
    let x = m.column(1).into_owned();
    let nuisance = m.columns(2, cols - 2).into_owned();
    Ok((y, DesignSplit::with_intercept(x, &nuisance)?))
}

fn echo_model(echo: &mut Echo, m: &ModelArgs, family: Family) {
    echo.add("data", m.data.display())
        .add("family", family.name())
        .add("theta", m.theta.map_or("none".to_string(), g9))
        .add("w", m.w)
        .add("seed", m.seed)
        .add("statistic", statistic_from(m.effective).name());
}

fn cmd_test(args: &TestArgs, threads: Option<usize>) -> Result<()> {
    let m = &args.model;
    let family = family_from(m.family, m.theta)?;
    let alternative = match args.alternative {
        AlternativeArg::Greater => Alternative::Greater,
        AlternativeArg::Less => Alternative::Less,
    };
    let (y, design) = load_model_data(&m.data)?;
    let ensemble = FlipEnsemble::generate(design.n(), m.w, m.seed)?;
    let statistic = statistic_from(m.effective);
    let result = sign_flip_test(family, &y, &design, args.beta0, alternative, &ensemble, statistic)?;

    let mut echo = Echo::new("test", threads);
    echo_model(&mut echo, m, family);
    echo.add("beta0", g9(args.beta0)).add("alternative", alternative.name());
    let mut out = open_output(m.out.as_deref())?;
    echo.write(&mut out)?;
    writeln!(out, "n = {}", design.n())?;
    if let Ok(fit) = fit_full(family, &y, &design) {
        writeln!(out, "estimate = {}", g9(fit.beta_hat))?;
    }
    writeln!(out, "beta0 = {}", g9(result.beta0))?;
    writeln!(out, "alternative = {}", alternative.name())?;
    writeln!(out, "w = {}", ensemble.w())?;
    writeln!(out, "statistic = {}", statistic.name())?;
    writeln!(out, "observed = {}", g9(result.observed()))?;
    writeln!(out, "p_value = {}", g9(result.p_value))?;
    out.flush()?;
    Ok(())
}

fn cmd_confint(args: &ConfintArgs, threads: Option<usize>) -> Result<()> {
    let m = &args.model;
    let family = family_from(m.family, m.theta)?;
    let (y, design) = load_model_data(&m.data)?;
    let config = CiConfig {
        level: args.level,
        method: if args.method == MethodArg::Symmetric { FlipMethod::Symmetric } else { FlipMethod::Equitailed },
        statistic: statistic_from(m.effective),
        tol_fraction: args.tol_fraction,
        w: m.w,
        seed: m.seed,
        ..CiConfig::default()
    };
    config.validate()?;
    let ci: ConfidenceInterval = match args.method {
        MethodArg::Equitailed | MethodArg::Symmetric => confint(family, &y, &design, &config)?,
        MethodArg::Wald => wald_interval(&fit_full(family, &y, &design)?, config.alpha())?,
        MethodArg::Sandwich => {
            sandwich_interval(&fit_full(family, &y, &design)?, &design, &y, config.alpha(), args.hc1)?
        }
    };

    let mut echo = Echo::new("confint", threads);
    echo_model(&mut echo, m, family);
    echo.add("level", g9(args.level))
        .add("method", ci.method.name())
        .add("tol_fraction", g9(args.tol_fraction))
        .add("hc1", args.hc1);
    let mut out = open_output(m.out.as_deref())?;
    echo.write(&mut out)?;
    writeln!(out, "n = {}", design.n())?;
    writeln!(out, "method = {}", ci.method.name())?;
    writeln!(out, "level = {}", g9(ci.level))?;
    writeln!(out, "estimate = {}", g9(ci.estimate))?;
    writeln!(out, "lower = {}", g9(ci.lower))?;
    writeln!(out, "upper = {}", g9(ci.upper))?;
    writeln!(out, "width = {}", g9(ci.width()))?;
    writeln!(out, "p_evaluations = {}", ci.p_evaluations)?;
    out.flush()?;
    Ok(())
}

fn cmd_simulate(args: &SimulateArgs, threads: Option<usize>) -> Result<()> {
    let id: ScenarioId = args.scenario.parse()?;
    let scenario = Scenario {
        id,
        true_beta: args.beta,
        true_gamma: args.gamma,
        covariate_correlation: args.correlation,
        hetero_lambda: args.hetero_lambda,
        negbin_theta: args.theta,
    };
    let config = SimConfig {
        n: args.n,
        reps: args.reps,
        alpha: CiConfig { level: args.level, ..CiConfig::default() }.alpha(),
        w: args.w,
        seed: args.seed,
        statistic: statistic_from(args.effective),
        tol_fraction: args.tol_fraction,
        small_sample: args.hc1,
        ..SimConfig::default()
    };
    if !(args.level > 0.5 && args.level < 1.0) {
        return Err(Error::InvalidInput(format!("level must be in (0.5, 1), got {}", args.level)));
    }
    let (summary, reps) = run_scenario_with(&scenario, &config)?;

    let mut echo = Echo::new("simulate", threads);
    echo.add("scenario", id.name())
        .add("N", args.n)
        .add("reps", args.reps)
        .add("level", g9(args.level))
        .add("w", args.w)
        .add("seed", args.seed)
        .add("tol_fraction", g9(args.tol_fraction))
        .add("statistic", config.statistic.name())
        .add("sandwich", if args.hc1 { "hc1" } else { "hc0" })
        .add("beta", g9(args.beta))
        .add("gamma", g9(args.gamma))
        .add("correlation", g9(args.correlation))
        .add("hetero_lambda", g9(args.hetero_lambda))
        .add("theta", g9(args.theta))
        .add("nominal_band", format!("{} {}", g9(summary.nominal_band.0), g9(summary.nominal_band.1)));
    let mut out = open_output(args.out.as_deref())?;
    echo.write(&mut out)?;
    write_summary_csv(std::slice::from_ref(&summary), &mut out)?;
    out.flush()?;
    if let Some(path) = &args.rep_log {
        let mut log_out = BufWriter::new(File::create(path)?);
        echo.write(&mut log_out)?;
        write_rep_log(&scenario, args.n, &reps, &mut log_out)?;
        log_out.flush()?;
    }
    Ok(())
}

fn cmd_deg(args: &DegArgs, threads: Option<usize>) -> Result<()> {
    let config = DegConfig {
        level: args.level,
        w: args.w,
        seed: args.seed,
        theta: args.theta,
        tol_fraction: args.tol_fraction,
        include_symmetric: args.symmetric,
        small_sample: args.hc1,
        ..DegConfig::default()
    };
    if let Some(t) = args.theta {
        Family::negative_binomial(t)?;
    }
    let expr = load_expression(&args.counts)?;
    let covariates = load_covariates(&args.covariates)?;
    let results = analyze_all(&expr, &covariates, &config)?;

    let mut echo = Echo::new("deg", threads);
    echo.add("counts", args.counts.display())
        .add("covariates", args.covariates.display())
        .add("out", args.out.display())
        .add("seed", args.seed)
        .add("theta", args.theta.map_or("moments".to_string(), g9))
        .add("level", g9(args.level))
        .add("w", args.w)
        .add("tol_fraction", g9(args.tol_fraction))
        .add("statistic", config.statistic.name())
        .add("symmetric", args.symmetric)
        .add("sandwich", if args.hc1 { "hc1" } else { "hc0" });

    std::fs::create_dir_all(&args.out)?;
    let mut res = BufWriter::new(File::create(args.out.join("results.csv"))?);
    echo.write(&mut res)?;
    write_results(&results, &mut res)?;
    res.flush()?;
    let mut sum = BufWriter::new(File::create(args.out.join("summary.csv"))?);
    echo.write(&mut sum)?;
    write_summary(&results, &config, &mut sum)?;
    sum.flush()?;

    let skipped = results.iter().filter(|r| r.status != GeneStatus::Ok).count();
    let mut stdout = io::stdout().lock();
    echo.write(&mut stdout)?;
    writeln!(stdout, "genes = {}", results.len())?;
    writeln!(stdout, "skipped = {skipped}")?;
    if skipped * 5 > results.len() {
        writeln!(stdout, "warning = more than 20% of genes skipped")?;
    }
    Ok(())
}
