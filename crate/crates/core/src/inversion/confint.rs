use nalgebra::DVector;

use super::bisect::{bisect_equitailed_bound, bisect_symmetric_with, find_start_with, Start};
use super::pfunction::{PValueFunction, Side};
use crate::flip::{FlipEnsemble, Statistic};
use crate::glm::{fit_full, DesignSplit, Family};
use crate::quantile::two_sided_critical;
use crate::{Error, Result};

/// How an interval was constructed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IntervalMethod {
    FlipEquitailed,
    FlipSymmetric,
    Wald,
    Sandwich,
}

impl IntervalMethod {
    pub const ALL: [IntervalMethod; 4] = [
        IntervalMethod::FlipEquitailed,
        IntervalMethod::FlipSymmetric,
        IntervalMethod::Wald,
        IntervalMethod::Sandwich,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            IntervalMethod::FlipEquitailed => "flip-equitailed",
            IntervalMethod::FlipSymmetric => "flip-symmetric",
            IntervalMethod::Wald => "wald",
            IntervalMethod::Sandwich => "sandwich",
        }
    }
}

/// Interval for the target coefficient. Bounds may be infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfidenceInterval {
    pub lower: f64,
    pub upper: f64,
    pub estimate: f64,
    pub level: f64,
    pub method: IntervalMethod,
    /// Sign-flip tests computed while building the interval (0 for Wald-type).
    pub p_evaluations: usize,
}

impl ConfidenceInterval {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn is_finite(&self) -> bool {
        self.lower.is_finite() && self.upper.is_finite()
    }

    pub fn contains(&self, beta: f64) -> bool {
        self.lower <= beta && beta <= self.upper
    }
}

/// Shape of a flip-based interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FlipMethod {
    /// Each bound inverts a one-sided test at level α/2.
    Equitailed,
    /// `β̂ ± δ` with the two one-sided p-values summing to α.
    Symmetric,
}

impl FlipMethod {
    pub fn interval_method(self) -> IntervalMethod {
        match self {
            FlipMethod::Equitailed => IntervalMethod::FlipEquitailed,
            FlipMethod::Symmetric => IntervalMethod::FlipSymmetric,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CiConfig {
    pub level: f64,
    pub method: FlipMethod,
    pub statistic: Statistic,
    /// Bisection tolerance as a fraction of the initial step ε.
    pub tol_fraction: f64,
    pub max_expansion: usize,
    pub epsilon_floor: f64,
    pub epsilon_scale_divisor: f64,
    pub w: usize,
    pub seed: u64,
}

impl Default for CiConfig {
    fn default() -> Self {
        CiConfig {
            level: 0.95,
            method: FlipMethod::Equitailed,
            statistic: Statistic::Standardized,
            tol_fraction: 1.0 / 1024.0,
            max_expansion: 10,
            epsilon_floor: 0.2,
            epsilon_scale_divisor: 100.0,
            w: 1000,
            seed: 0,
        }
    }
}

impl CiConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.level > 0.5 && self.level < 1.0) {
            return Err(Error::InvalidInput(format!("level must be in (0.5, 1), got {}", self.level)));
        }
        if !(self.tol_fraction > 0.0 && self.tol_fraction < 1.0) {
            return Err(Error::InvalidInput(format!(
                "tolerance fraction must be in (0, 1), got {}",
                self.tol_fraction
            )));
        }
        if !(self.epsilon_floor > 0.0 && self.epsilon_scale_divisor > 0.0) {
            return Err(Error::InvalidInput("epsilon floor and divisor must be positive".into()));
        }
        if self.max_expansion == 0 {
            return Err(Error::InvalidInput("max expansion must be at least 1".into()));
        }
        if self.w < 2 {
            return Err(Error::InvalidInput(format!("w must be at least 2, got {}", self.w)));
        }
        Ok(())
    }

    /// `1 − level`, snapped to 12 decimals so that e.g. level 0.95 gives
    /// exactly 0.05: p-values are multiples of `1/w` and must not slip under
    /// `α/2` through the rounding of `1 − 0.95`.
    pub fn alpha(&self) -> f64 {
        ((1.0 - self.level) * 1e12).round() / 1e12
    }
}

/// Initial search step: `max{z_{1−α/2} σ̂, |β̂| / 100, 0.2}`.
pub fn initial_epsilon(beta_hat: f64, sigma_hat: f64, alpha: f64) -> Result<f64> {
    initial_epsilon_with(beta_hat, sigma_hat, alpha, 100.0, 0.2)
}

pub fn initial_epsilon_with(
    beta_hat: f64,
    sigma_hat: f64,
    alpha: f64,
    scale_divisor: f64,
    floor: f64,
) -> Result<f64> {
    if !(sigma_hat >= 0.0) {
        return Err(Error::InvalidInput(format!("sigma_hat must be non-negative, got {sigma_hat}")));
    }
    let wald_half = two_sided_critical(alpha)? * sigma_hat;
    Ok(wald_half.max(beta_hat.abs() / scale_divisor).max(floor))
}

/// Sign-flip confidence interval for the target coefficient.
///
/// Fits the full model, derives ε from the model-based standard error, then
/// searches each side (equitailed, the two sides in parallel) or the common
/// half-width (symmetric) by conservative bisection with tolerance
/// `ε · tol_fraction`. All tests share one flip ensemble drawn from
/// `(n, w, seed)`.
pub fn confint(family: Family, y: &DVector<f64>, design: &DesignSplit, config: &CiConfig) -> Result<ConfidenceInterval> {
    config.validate()?;
    let ensemble = FlipEnsemble::generate(design.n(), config.w, config.seed)?;
    confint_with_ensemble(family, y, design, config, &ensemble)
}

pub fn confint_with_ensemble(
    family: Family,
    y: &DVector<f64>,
    design: &DesignSplit,
    config: &CiConfig,
    ensemble: &FlipEnsemble,
) -> Result<ConfidenceInterval> {
    config.validate()?;
    let alpha = config.alpha();
    let method = config.method.interval_method();
    let search = Search { family, y, design, ensemble, config };

    let (beta_hat, se) = match fit_full(family, y, design) {
        Ok(fit) => (fit.beta_hat, fit.se_model),
        Err(Error::Degenerate { last, .. }) if !last.is_empty() && last[0].is_finite() => {
            // The estimate diverges toward the sign of the last iterate: that
            // side is unbounded and the other side is searched from there
            // without the (meaningless) model standard error.
            let beta_last = last[0];
            let epsilon = initial_epsilon_with(
                beta_last,
                0.0,
                alpha,
                config.epsilon_scale_divisor,
                config.epsilon_floor,
            )?;
            let (side, threshold) = match config.method {
                FlipMethod::Equitailed => (if beta_last > 0.0 { Side::Lower } else { Side::Upper }, alpha / 2.0),
                // A symmetric interval around a divergent estimate is unbounded on both sides.
                FlipMethod::Symmetric => {
                    return Ok(ConfidenceInterval {
                        lower: f64::NEG_INFINITY,
                        upper: f64::INFINITY,
                        estimate: beta_last,
                        level: config.level,
                        method,
                        p_evaluations: 0,
                    })
                }
            };
            let (bound, evals) = search.one_side(side, beta_last, epsilon, threshold)?;
            let (lower, upper) = match side {
                Side::Lower => (bound, f64::INFINITY),
                Side::Upper => (f64::NEG_INFINITY, bound),
            };
            return Ok(ConfidenceInterval {
                lower,
                upper,
                estimate: beta_last,
                level: config.level,
                method,
                p_evaluations: evals,
            });
        }
        Err(e) => return Err(e),
    };

    let epsilon =
        initial_epsilon_with(beta_hat, se, alpha, config.epsilon_scale_divisor, config.epsilon_floor)?;
    match config.method {
        FlipMethod::Equitailed => {
            let (lo, hi) = rayon::join(
                || search.one_side(Side::Lower, beta_hat, epsilon, alpha / 2.0),
                || search.one_side(Side::Upper, beta_hat, epsilon, alpha / 2.0),
            );
            let (lower, lo_evals) = lo?;
            let (upper, hi_evals) = hi?;
            Ok(ConfidenceInterval {
                lower,
                upper,
                estimate: beta_hat,
                level: config.level,
                method,
                p_evaluations: lo_evals + hi_evals,
            })
        }
        FlipMethod::Symmetric => {
            let mut minus = search.pfunction(Side::Lower);
            let mut plus = search.pfunction(Side::Upper);
            let delta = bisect_symmetric_with(
                &mut minus,
                &mut plus,
                beta_hat,
                epsilon,
                epsilon * config.tol_fraction,
                alpha,
                config.max_expansion,
            )?;
            Ok(ConfidenceInterval {
                lower: beta_hat - delta,
                upper: beta_hat + delta,
                estimate: beta_hat,
                level: config.level,
                method,
                p_evaluations: minus.evaluations() + plus.evaluations(),
            })
        }
    }
}

struct Search<'a> {
    family: Family,
    y: &'a DVector<f64>,
    design: &'a DesignSplit,
    ensemble: &'a FlipEnsemble,
    config: &'a CiConfig,
}

impl<'a> Search<'a> {
    fn pfunction(&self, side: Side) -> PValueFunction<'a> {
        PValueFunction::new(self.family, self.y, self.design, self.ensemble, side, self.config.statistic)
    }

    /// Bound on one side (infinite when unbounded) and the number of tests used.
    fn one_side(&self, side: Side, beta_hat: f64, epsilon: f64, threshold: f64) -> Result<(f64, usize)> {
        let mut fp = self.pfunction(side);
        let start = find_start_with(&mut fp, side, beta_hat, epsilon, threshold, self.config.max_expansion)?;
        let bound = match start {
            Start::Unbounded => -side.toward_estimate() * f64::INFINITY,
            Start::Found(s) => {
                bisect_equitailed_bound(&mut fp, s, epsilon, epsilon * self.config.tol_fraction, threshold, side)?
            }
        };
        Ok((bound, fp.evaluations()))
    }
}
