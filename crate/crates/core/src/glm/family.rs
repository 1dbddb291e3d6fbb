use nalgebra::DVector;

use crate::{Error, Result};

/// Linear predictors are clamped to this magnitude before exponentiation.
pub const ETA_BOUND: f64 = 30.0;

/// Floor applied to the dispersion before it enters `V`, so that exact fits
/// with zero residuals do not produce infinite weights.
pub const DISPERSION_FLOOR: f64 = 1e-20;

/// Distribution and link bundle. Each family uses its canonical link except
/// the negative binomial, which uses the log link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Family {
    /// Normal errors, identity link, dispersion estimated from Pearson residuals.
    Gaussian,
    /// Binary response, logit link, dispersion fixed at 1.
    Bernoulli,
    /// Counts, log link, dispersion fixed at 1.
    Poisson,
    /// Counts with variance `mu + mu^2 / theta`, log link. `theta` is fixed per fit.
    NegativeBinomial { theta: f64 },
}

impl Family {
    pub fn negative_binomial(theta: f64) -> Result<Self> {
        if !(theta.is_finite() && theta > 0.0) {
            return Err(Error::InvalidInput(format!(
                "negative binomial theta must be positive and finite, got {theta}"
            )));
        }
        Ok(Family::NegativeBinomial { theta })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Family::Gaussian => "gaussian",
            Family::Bernoulli => "bernoulli",
            Family::Poisson => "poisson",
            Family::NegativeBinomial { .. } => "negbin",
        }
    }

    /// Whether the dispersion is estimated from the data (only gaussian).
    pub fn estimates_dispersion(&self) -> bool {
        matches!(self, Family::Gaussian)
    }

    fn clamp_eta(&self, eta: f64) -> (f64, bool) {
        match self {
            Family::Gaussian => (eta, false),
            _ => {
                let c = eta.clamp(-ETA_BOUND, ETA_BOUND);
                (c, c != eta)
            }
        }
    }

    pub fn link(&self, mu: f64) -> f64 {
        match self {
            Family::Gaussian => mu,
            Family::Bernoulli => (mu / (1.0 - mu)).ln(),
            Family::Poisson | Family::NegativeBinomial { .. } => mu.ln(),
        }
    }

    /// Inverse link with the linear predictor clamped to `[-30, 30]` for the
    /// logit and log links.
    pub fn inverse_link(&self, eta: f64) -> f64 {
        let (eta, _) = self.clamp_eta(eta);
        match self {
            Family::Gaussian => eta,
            Family::Bernoulli => logistic(eta),
            Family::Poisson | Family::NegativeBinomial { .. } => eta.exp(),
        }
    }

    /// dμ/dη evaluated at the (clamped) linear predictor.
    pub fn mu_eta(&self, eta: f64) -> f64 {
        let (eta, _) = self.clamp_eta(eta);
        match self {
            Family::Gaussian => 1.0,
            Family::Bernoulli => {
                let p = logistic(eta);
                p * (1.0 - p)
            }
            Family::Poisson | Family::NegativeBinomial { .. } => eta.exp(),
        }
    }

    /// Variance function v(μ), without the dispersion factor.
    pub fn variance(&self, mu: f64) -> f64 {
        match self {
            Family::Gaussian => 1.0,
            Family::Bernoulli => mu * (1.0 - mu),
            Family::Poisson => mu,
            Family::NegativeBinomial { theta } => mu + mu * mu / theta,
        }
    }

    pub fn unit_deviance(&self, y: f64, mu: f64) -> f64 {
        match self {
            Family::Gaussian => (y - mu) * (y - mu),
            Family::Bernoulli => {
                if y > 0.5 {
                    -2.0 * mu.ln()
                } else {
                    -2.0 * (1.0 - mu).ln()
                }
            }
            Family::Poisson => 2.0 * (xlogy(y, y / mu) - (y - mu)),
            Family::NegativeBinomial { theta } => {
                2.0 * (xlogy(y, y / mu) - (y + theta) * ((y + theta) / (mu + theta)).ln())
            }
        }
    }

    pub fn deviance(&self, y: &DVector<f64>, mu: &DVector<f64>) -> f64 {
        y.iter()
            .zip(mu.iter())
            .map(|(&yi, &mi)| self.unit_deviance(yi, mi))
            .sum()
    }

    /// Starting mean for IRLS.
    pub(crate) fn initial_mu(&self, y: f64) -> f64 {
        match self {
            Family::Gaussian => y,
            Family::Bernoulli => (y + 0.5) / 2.0,
            Family::Poisson | Family::NegativeBinomial { .. } => y + 0.1,
        }
    }

    /// Checks that every response lies in the family's support.
    pub fn check_response(&self, y: &DVector<f64>) -> Result<()> {
        for (i, &v) in y.iter().enumerate() {
            let ok = match self {
                Family::Gaussian => v.is_finite(),
                Family::Bernoulli => v == 0.0 || v == 1.0,
                Family::Poisson | Family::NegativeBinomial { .. } => {
                    v.is_finite() && v >= 0.0 && v.fract() == 0.0
                }
            };
            if !ok {
                return Err(Error::InvalidInput(format!(
                    "response {v} at position {i} is outside the {} support",
                    self.name()
                )));
            }
        }
        Ok(())
    }

    /// True when μ sits numerically on the edge of the mean range.
    pub(crate) fn at_boundary(&self, eta: f64) -> bool {
        !matches!(self, Family::Gaussian) && eta.abs() >= ETA_BOUND
    }
}

fn logistic(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

/// Per-observation IRLS quantities: the diagonals of D, V and W = D V⁻¹ D.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkingQuantities {
    pub mu: DVector<f64>,
    pub d: DVector<f64>,
    pub v: DVector<f64>,
    pub w: DVector<f64>,
    /// Number of linear predictors that had to be clamped.
    pub clamped: usize,
}

pub fn working_quantities(family: Family, eta: &DVector<f64>, dispersion: f64) -> WorkingQuantities {
    let phi = dispersion.max(DISPERSION_FLOOR);
    let n = eta.len();
    let mut mu = DVector::zeros(n);
    let mut d = DVector::zeros(n);
    let mut v = DVector::zeros(n);
    let mut w = DVector::zeros(n);
    let mut clamped = 0;
    for i in 0..n {
        if family.clamp_eta(eta[i]).1 {
            clamped += 1;
        }
        mu[i] = family.inverse_link(eta[i]);
        d[i] = family.mu_eta(eta[i]);
        v[i] = family.variance(mu[i]) * phi;
        w[i] = d[i] * d[i] / v[i];
    }
    if clamped > 0 {
        log::debug!("{clamped} linear predictors clamped to ±{ETA_BOUND}");
    }
    WorkingQuantities { mu, d, v, w, clamped }
}

/// Dispersion estimate: Pearson statistic over residual degrees of freedom for
/// the gaussian family, 1 for every other family.
pub fn estimate_dispersion(
    family: Family,
    y: &DVector<f64>,
    mu: &DVector<f64>,
    residual_dof: usize,
) -> Result<f64> {
    if residual_dof == 0 {
        return Err(Error::InvalidInput("residual degrees of freedom must be >= 1".into()));
    }
    Ok(match family {
        Family::Gaussian => {
            let pearson: f64 = y
                .iter()
                .zip(mu.iter())
                .map(|(&yi, &mi)| (yi - mi) * (yi - mi) / family.variance(mi))
                .sum();
            pearson / residual_dof as f64
        }
        _ => 1.0,
    })
}
