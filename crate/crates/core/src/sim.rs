//! Coverage simulations for the four interval methods and the p-value
//! monotonicity experiment.
//!
//! Every scenario draws `(x, z)` from a bivariate normal with unit variances
//! and correlation `covariate_correlation`, builds `η = β x + γ z` and
//! samples the response according to the scenario. The fitted design is
//! always `x` against `Z = [1, z]`.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Gamma, Poisson, StandardNormal};
use rayon::prelude::*;

use crate::baselines::{sandwich_interval, wald_interval};
use crate::flip::{FlipEnsemble, Statistic};
use crate::glm::{fit_full, DesignSplit, Family};
use crate::inversion::{
    confint_with_ensemble, equispaced, monotonicity_violations, pvalue_curve, CiConfig, ConfidenceInterval,
    FlipMethod, IntervalMethod, Side,
};
use crate::quantile::two_sided_critical;
use crate::report::g9;
use crate::seeding::derive;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScenarioId {
    LmCorrect,
    LogitCorrect,
    PoisCorrect,
    NegbinAsPois,
    HeteroTarget,
    HeteroNuisance,
}

impl ScenarioId {
    pub const ALL: [ScenarioId; 6] = [
        ScenarioId::LmCorrect,
        ScenarioId::LogitCorrect,
        ScenarioId::PoisCorrect,
        ScenarioId::NegbinAsPois,
        ScenarioId::HeteroTarget,
        ScenarioId::HeteroNuisance,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioId::LmCorrect => "lm-correct",
            ScenarioId::LogitCorrect => "logit-correct",
            ScenarioId::PoisCorrect => "pois-correct",
            ScenarioId::NegbinAsPois => "negbin-as-pois",
            ScenarioId::HeteroTarget => "hetero-target",
            ScenarioId::HeteroNuisance => "hetero-nuisance",
        }
    }

    /// Family used for fitting (not necessarily the generating law).
    pub fn fit_family(self) -> Family {
        match self {
            ScenarioId::LogitCorrect => Family::Bernoulli,
            ScenarioId::PoisCorrect | ScenarioId::NegbinAsPois => Family::Poisson,
            _ => Family::Gaussian,
        }
    }
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScenarioId::ALL.into_iter().find(|id| id.name() == s).ok_or_else(|| {
            let valid: Vec<&str> = ScenarioId::ALL.iter().map(|id| id.name()).collect();
            Error::InvalidInput(format!("unknown scenario '{s}'; valid ids: {}", valid.join(", ")))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scenario {
    pub id: ScenarioId,
    pub true_beta: f64,
    pub true_gamma: f64,
    pub covariate_correlation: f64,
    /// Log-sd slope of the hetero-* scenarios.
    pub hetero_lambda: f64,
    /// Negative binomial size of negbin-as-pois.
    pub negbin_theta: f64,
}

impl Scenario {
    pub fn new(id: ScenarioId) -> Self {
        Scenario {
            id,
            true_beta: 0.0,
            true_gamma: -0.5,
            covariate_correlation: 0.2,
            hetero_lambda: 1.0,
            negbin_theta: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.covariate_correlation.abs() < 1.0) {
            return Err(Error::InvalidInput(format!(
                "covariate correlation must be in (-1, 1), got {}",
                self.covariate_correlation
            )));
        }
        if !(self.negbin_theta > 0.0 && self.negbin_theta.is_finite()) {
            return Err(Error::InvalidInput(format!("theta must be positive, got {}", self.negbin_theta)));
        }
        if !(self.true_beta.is_finite() && self.true_gamma.is_finite() && self.hetero_lambda.is_finite()) {
            return Err(Error::InvalidInput("scenario coefficients must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub y: DVector<f64>,
    pub x: DVector<f64>,
    /// `[1, z]`.
    pub z: DMatrix<f64>,
}

impl Dataset {
    pub fn design(&self) -> Result<DesignSplit> {
        DesignSplit::new(self.x.clone(), self.z.clone())
    }
}

pub fn generate_dataset(scenario: &Scenario, n: usize, seed: u64) -> Result<Dataset> {
    scenario.validate()?;
    if n < 10 {
        return Err(Error::InvalidInput(format!("N must be at least 10, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rho = scenario.covariate_correlation;
    let mut x = DVector::zeros(n);
    let mut z = DMatrix::from_element(n, 2, 1.0);
    for i in 0..n {
        let e1: f64 = rng.sample(StandardNormal);
        let e2: f64 = rng.sample(StandardNormal);
        x[i] = e1;
        z[(i, 1)] = rho * e1 + (1.0 - rho * rho).sqrt() * e2;
    }
    let (beta, gamma, lambda) = (scenario.true_beta, scenario.true_gamma, scenario.hetero_lambda);
    let mut y = DVector::zeros(n);
    for i in 0..n {
        let eta = beta * x[i] + gamma * z[(i, 1)];
        y[i] = match scenario.id {
            ScenarioId::LmCorrect => eta + rng.sample::<f64, _>(StandardNormal),
            ScenarioId::HeteroTarget => eta + (lambda * x[i]).exp() * rng.sample::<f64, _>(StandardNormal),
            ScenarioId::HeteroNuisance => eta + (lambda * z[(i, 1)]).exp() * rng.sample::<f64, _>(StandardNormal),
            ScenarioId::LogitCorrect => {
                let p = 1.0 / (1.0 + (-eta).exp());
                let b = Bernoulli::new(p).map_err(|e| Error::InvalidInput(e.to_string()))?;
                if b.sample(&mut rng) { 1.0 } else { 0.0 }
            }
            ScenarioId::PoisCorrect => poisson_draw(eta.exp(), &mut rng)?,
            ScenarioId::NegbinAsPois => {
                let theta = scenario.negbin_theta;
                let gamma = Gamma::new(theta, eta.exp() / theta).map_err(|e| Error::InvalidInput(e.to_string()))?;
                poisson_draw(gamma.sample(&mut rng), &mut rng)?
            }
        };
    }
    Ok(Dataset { y, x, z })
}

fn poisson_draw<R: Rng>(lambda: f64, rng: &mut R) -> Result<f64> {
    if lambda <= 0.0 {
        return Ok(0.0);
    }
    let p = Poisson::new(lambda).map_err(|e| Error::InvalidInput(format!("poisson mean {lambda}: {e}")))?;
    Ok(p.sample(rng))
}

/// `level ± z_{1−α/2} sqrt(level (1 − level) / reps)` with `level = 1 − α`.
pub fn nominal_band(reps: usize, alpha: f64) -> Result<(f64, f64)> {
    if reps == 0 {
        return Err(Error::InvalidInput("reps must be at least 1".into()));
    }
    let level = 1.0 - alpha;
    let half = two_sided_critical(alpha)? * (level * (1.0 - level) / reps as f64).sqrt();
    Ok((level - half, level + half))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub n: usize,
    pub reps: usize,
    pub alpha: f64,
    pub w: usize,
    pub seed: u64,
    pub statistic: Statistic,
    pub tol_fraction: f64,
    /// Use the HC1 sandwich instead of HC0.
    pub small_sample: bool,
    /// Largest tolerated share of failed replications per method.
    pub failure_budget: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n: 50,
            reps: 1000,
            alpha: 0.05,
            w: 1000,
            seed: 0,
            statistic: Statistic::Standardized,
            tol_fraction: 1.0 / 1024.0,
            small_sample: false,
            failure_budget: 0.01,
        }
    }
}

/// One method's outcome in one replication. `None` when the method failed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MethodOutcome {
    pub method: IntervalMethod,
    pub interval: Option<(f64, f64)>,
}

impl MethodOutcome {
    pub fn covered(&self, truth: f64) -> Option<bool> {
        self.interval.map(|(lo, hi)| lo <= truth && truth <= hi)
    }

    pub fn width(&self) -> Option<f64> {
        self.interval.map(|(lo, hi)| hi - lo)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepResult {
    pub rep: usize,
    pub outcomes: [MethodOutcome; 4],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MethodSummary {
    pub method: IntervalMethod,
    pub coverage: f64,
    /// Median over finite widths; NaN if there are none.
    pub median_width: f64,
    pub inf_count: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub scenario: ScenarioId,
    pub n: usize,
    pub reps: usize,
    pub methods: [MethodSummary; 4],
    pub nominal_band: (f64, f64),
}

impl Summary {
    pub fn method(&self, method: IntervalMethod) -> &MethodSummary {
        self.methods.iter().find(|m| m.method == method).expect("all methods summarized")
    }
}

/// All four intervals on one simulated dataset.
pub fn run_replication(scenario: &Scenario, config: &SimConfig, rep: usize) -> Result<RepResult> {
    let rep_seed = derive(config.seed, rep as u64);
    let data = generate_dataset(scenario, config.n, derive(rep_seed, 0))?;
    let design = data.design()?;
    let family = scenario.id.fit_family();
    let ensemble = FlipEnsemble::generate(config.n, config.w, derive(rep_seed, 1))?;
    let ci_config = CiConfig {
        level: 1.0 - config.alpha,
        statistic: config.statistic,
        tol_fraction: config.tol_fraction,
        w: config.w,
        ..CiConfig::default()
    };
    let bounds = |r: Result<ConfidenceInterval>, method: IntervalMethod| {
        let interval = match r {
            Ok(ci) => Some((ci.lower, ci.upper)),
            Err(e) => {
                log::debug!("{scenario_id} rep {rep} {}: {e}", method.name(), scenario_id = scenario.id);
                None
            }
        };
        MethodOutcome { method, interval }
    };
    let flip = |method: FlipMethod| {
        let cfg = CiConfig { method, ..ci_config };
        bounds(confint_with_ensemble(family, &data.y, &design, &cfg, &ensemble), method.interval_method())
    };
    let (wald, sandwich) = match fit_full(family, &data.y, &design) {
        Ok(fit) => (
            wald_interval(&fit, config.alpha),
            sandwich_interval(&fit, &design, &data.y, config.alpha, config.small_sample),
        ),
        Err(e) => {
            let msg = e.to_string();
            (Err(e), Err(Error::Singular(msg)))
        }
    };
    Ok(RepResult {
        rep,
        outcomes: [
            flip(FlipMethod::Equitailed),
            flip(FlipMethod::Symmetric),
            bounds(wald, IntervalMethod::Wald),
            bounds(sandwich, IntervalMethod::Sandwich),
        ],
    })
}

/// Runs `config.reps` replications in parallel and aggregates them in
/// replication order.
pub fn run_scenario_with(scenario: &Scenario, config: &SimConfig) -> Result<(Summary, Vec<RepResult>)> {
    scenario.validate()?;
    if config.reps == 0 {
        return Err(Error::InvalidInput("reps must be at least 1".into()));
    }
    CiConfig { level: 1.0 - config.alpha, w: config.w, tol_fraction: config.tol_fraction, ..CiConfig::default() }
        .validate()?;
    let results: Vec<RepResult> = (0..config.reps)
        .into_par_iter()
        .map(|rep| run_replication(scenario, config, rep))
        .collect::<Result<_>>()?;
    let summary = summarize(scenario, config, &results)?;
    Ok((summary, results))
}

pub fn run_scenario(scenario: &Scenario, n: usize, reps: usize, alpha: f64, w: usize, seed: u64) -> Result<Summary> {
    let config = SimConfig { n, reps, alpha, w, seed, ..SimConfig::default() };
    run_scenario_with(scenario, &config).map(|(s, _)| s)
}

fn summarize(scenario: &Scenario, config: &SimConfig, results: &[RepResult]) -> Result<Summary> {
    let truth = scenario.true_beta;
    let methods = std::array::from_fn(|k| {
        let outcomes: Vec<&MethodOutcome> = results.iter().map(|r| &r.outcomes[k]).collect();
        let method = outcomes.first().map(|o| o.method).unwrap_or(IntervalMethod::ALL[k]);
        let ok: Vec<&MethodOutcome> = outcomes.iter().copied().filter(|o| o.interval.is_some()).collect();
        let covered = ok.iter().filter(|o| o.covered(truth) == Some(true)).count();
        let mut widths: Vec<f64> = ok.iter().filter_map(|o| o.width()).filter(|w| w.is_finite()).collect();
        MethodSummary {
            method,
            coverage: if ok.is_empty() { f64::NAN } else { covered as f64 / ok.len() as f64 },
            median_width: median(&mut widths),
            inf_count: ok.len() - widths.len(),
            failures: outcomes.len() - ok.len(),
        }
    });
    let methods: [MethodSummary; 4] = methods;
    for m in &methods {
        if m.failures as f64 > config.failure_budget * config.reps as f64 {
            return Err(Error::FailureBudget { failed: m.failures, total: config.reps });
        }
    }
    Ok(Summary {
        scenario: scenario.id,
        n: config.n,
        reps: config.reps,
        methods,
        nominal_band: nominal_band(config.reps, config.alpha)?,
    })
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let m = values.len() / 2;
    if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    }
}

pub const SUMMARY_HEADER: [&str; 7] = ["scenario", "N", "method", "coverage", "medianWidth", "infCount", "failures"];

pub fn write_summary_csv<W: Write>(summaries: &[Summary], out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(SUMMARY_HEADER)?;
    for s in summaries {
        for m in &s.methods {
            wtr.write_record([
                s.scenario.name().to_string(),
                s.n.to_string(),
                m.method.name().to_string(),
                g9(m.coverage),
                g9(m.median_width),
                m.inf_count.to_string(),
                m.failures.to_string(),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// One row per replication and method.
pub fn write_rep_log<W: Write>(scenario: &Scenario, n: usize, results: &[RepResult], out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["scenario", "N", "rep", "method", "lower", "upper", "width", "covered", "status"])?;
    for r in results {
        for o in &r.outcomes {
            let (lo, hi, width, covered, status) = match o.interval {
                Some((lo, hi)) => (
                    g9(lo),
                    g9(hi),
                    g9(hi - lo),
                    (o.covered(scenario.true_beta) == Some(true)).to_string(),
                    "ok",
                ),
                None => (String::new(), String::new(), String::new(), String::new(), "failed"),
            };
            wtr.write_record([
                scenario.id.name().to_string(),
                n.to_string(),
                r.rep.to_string(),
                o.method.name().to_string(),
                lo,
                hi,
                width,
                covered,
                status.to_string(),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonotonicityConfig {
    /// Generating model; the fitted family follows the scenario.
    pub scenario: ScenarioId,
    pub n: usize,
    pub grid_size: usize,
    pub w: usize,
    pub statistic: Statistic,
}

impl MonotonicityConfig {
    /// Logistic data and the standardized statistic.
    pub fn logistic(n: usize, grid_size: usize) -> Self {
        MonotonicityConfig { scenario: ScenarioId::LogitCorrect, n, grid_size, w: 1000, statistic: Statistic::Standardized }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonotonicityCurve {
    pub beta_hat: f64,
    /// `(beta0, p)` on `[β̂ − 1, β̂]`; `p` is `None` where the null fit failed.
    pub curve: Vec<(f64, Option<f64>)>,
    pub violations: usize,
}

/// Lower-side p-values on an equispaced grid over `[β̂ − 1, β̂]`, with a
/// single flip ensemble shared by all grid points.
pub fn monotonicity_experiment_with(config: &MonotonicityConfig, seed: u64) -> Result<MonotonicityCurve> {
    if config.grid_size < 2 {
        return Err(Error::InvalidInput("grid needs at least two points".into()));
    }
    let scenario = Scenario::new(config.scenario);
    let data = generate_dataset(&scenario, config.n, derive(seed, 0))?;
    let design = data.design()?;
    let family = config.scenario.fit_family();
    let fit = fit_full(family, &data.y, &design)?;
    let ensemble = FlipEnsemble::generate(config.n, config.w, derive(seed, 1))?;
    let grid = equispaced(fit.beta_hat - 1.0, fit.beta_hat, config.grid_size);
    let curve = pvalue_curve(family, &data.y, &design, &grid, Side::Lower, &ensemble, config.statistic)?;
    let violations = monotonicity_violations(&curve, Side::Lower);
    Ok(MonotonicityCurve { beta_hat: fit.beta_hat, curve, violations })
}

pub fn monotonicity_experiment(n: usize, seed: u64, grid_size: usize) -> Result<MonotonicityCurve> {
    monotonicity_experiment_with(&MonotonicityConfig::logistic(n, grid_size), seed)
}
