//! Wald and sandwich intervals computed from the full maximum likelihood fit.

use nalgebra::DVector;

use crate::glm::{inverse_r_factor, DesignSplit, FullFit};
use crate::inversion::{ConfidenceInterval, IntervalMethod};
use crate::quantile::two_sided_critical;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CovarianceKind {
    Model,
    SandwichHc0,
    SandwichHc1,
}

/// Standard error of the target coefficient under one covariance estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceEstimate {
    pub kind: CovarianceKind,
    pub se_beta: f64,
}

pub fn model_covariance(fit: &FullFit) -> CovarianceEstimate {
    CovarianceEstimate { kind: CovarianceKind::Model, se_beta: fit.se_model }
}

/// `[A⁻¹ B A⁻¹]_ββ` with `A = Mᵀ W M` and `B = Σ uᵢ uᵢᵀ`, `uᵢ = mᵢ dᵢ (yᵢ − μᵢ) / vᵢ`.
///
/// The dispersion cancels between A and B, so both are built from the
/// dispersion-free variance function. `small_sample` scales the standard
/// error by `sqrt(n / (n − p − 1))`.
pub fn sandwich_covariance(
    fit: &FullFit,
    design: &DesignSplit,
    y: &DVector<f64>,
    small_sample: bool,
) -> Result<CovarianceEstimate> {
    let n = design.n();
    if y.len() != n || fit.at_estimate.mu.len() != n {
        return Err(Error::InvalidInput(format!(
            "response has {} entries, design has {n} rows",
            y.len()
        )));
    }
    let family = fit.at_estimate.family;
    let m = design.full_matrix();
    let d = &fit.at_estimate.d;
    let mu = &fit.at_estimate.mu;
    let v0 = mu.map(|mu| family.variance(mu));
    let w0 = DVector::from_fn(n, |i, _| d[i] * d[i] / v0[i]);

    // g = A⁻¹ e₀, so the (β, β) entry is Σᵢ (gᵀ uᵢ)².
    let rinv = inverse_r_factor(&m, &w0)?;
    let g = &rinv * rinv.row(0).transpose();
    let mg = &m * g;
    let var: f64 = (0..n)
        .map(|i| {
            let s = mg[i] * d[i] * (y[i] - mu[i]) / v0[i];
            s * s
        })
        .sum();
    if !var.is_finite() {
        return Err(Error::Singular("sandwich covariance".into()));
    }
    let mut se = var.sqrt();
    let kind = if small_sample {
        let k = design.p() + 1;
        se *= (n as f64 / (n - k) as f64).sqrt();
        CovarianceKind::SandwichHc1
    } else {
        CovarianceKind::SandwichHc0
    };
    Ok(CovarianceEstimate { kind, se_beta: se })
}

fn symmetric_interval(beta_hat: f64, se: f64, alpha: f64, method: IntervalMethod) -> Result<ConfidenceInterval> {
    let half = two_sided_critical(alpha)? * se;
    Ok(ConfidenceInterval {
        lower: beta_hat - half,
        upper: beta_hat + half,
        estimate: beta_hat,
        level: 1.0 - alpha,
        method,
        p_evaluations: 0,
    })
}

/// `β̂ ± z_{1−α/2} · se_model`.
pub fn wald_interval(fit: &FullFit, alpha: f64) -> Result<ConfidenceInterval> {
    symmetric_interval(fit.beta_hat, fit.se_model, alpha, IntervalMethod::Wald)
}

/// `β̂ ± z_{1−α/2} · se_sandwich`.
pub fn sandwich_interval(
    fit: &FullFit,
    design: &DesignSplit,
    y: &DVector<f64>,
    alpha: f64,
    small_sample: bool,
) -> Result<ConfidenceInterval> {
    let cov = sandwich_covariance(fit, design, y, small_sample)?;
    symmetric_interval(fit.beta_hat, cov.se_beta, alpha, IntervalMethod::Sandwich)
}
