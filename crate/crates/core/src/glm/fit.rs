use nalgebra::{DMatrix, DVector};

use super::design::DesignSplit;
use super::family::{estimate_dispersion, working_quantities, Family};
use crate::{Error, Result};

/// IRLS stopping rule. A fit is converged when the relative deviance change
/// drops below `tol` and the largest coefficient update is below
/// `tol * (1 + max |coef|)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { max_iter: 50, tol: 1e-8 }
    }
}

/// Model fitted under `H0: beta = beta0`, with `x * beta0` entering as an offset.
#[derive(Debug, Clone, PartialEq)]
pub struct NullFit {
    pub family: Family,
    pub beta0: f64,
    pub gamma_hat: DVector<f64>,
    pub eta: DVector<f64>,
    pub mu: DVector<f64>,
    /// `y - mu`.
    pub residual: DVector<f64>,
    /// Diagonal of D = dμ/dη.
    pub d: DVector<f64>,
    /// Diagonal of V, dispersion included.
    pub v: DVector<f64>,
    /// Diagonal of W = D V⁻¹ D.
    pub w: DVector<f64>,
    pub dispersion: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Unconstrained maximum likelihood fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FullFit {
    pub beta_hat: f64,
    /// Model-based standard error of `beta_hat`.
    pub se_model: f64,
    /// Working quantities at the joint estimate; `beta0 == beta_hat`.
    pub at_estimate: NullFit,
}

impl FullFit {
    pub fn gamma_hat(&self) -> &DVector<f64> {
        &self.at_estimate.gamma_hat
    }
}

struct IrlsOutcome {
    coef: DVector<f64>,
    eta: DVector<f64>,
    iterations: usize,
    converged: bool,
    deviance: f64,
}

/// Weighted least squares `argmin ||sqrt(w) (m b - z)||` through a QR
/// factorization of `sqrt(w) m`.
pub(crate) fn weighted_least_squares(
    m: &DMatrix<f64>,
    w: &DVector<f64>,
    z: &DVector<f64>,
) -> Result<DVector<f64>> {
    let sw = w.map(f64::sqrt);
    let mut mw = m.clone();
    for (i, mut row) in mw.row_iter_mut().enumerate() {
        row *= sw[i];
    }
    let zw = z.component_mul(&sw);
    let qr = mw.qr();
    let rhs = qr.q().transpose() * zw;
    qr.r()
        .solve_upper_triangular(&rhs)
        .ok_or_else(|| Error::Singular("weighted design in IRLS".into()))
}

fn irls(
    family: Family,
    y: &DVector<f64>,
    m: &DMatrix<f64>,
    offset: &DVector<f64>,
    opts: &FitOptions,
) -> Result<IrlsOutcome> {
    let n = y.len();
    let mu0 = y.map(|v| family.initial_mu(v));
    let mut eta = mu0.map(|v| family.link(v));
    let mut dev_old = family.deviance(y, &mu0);
    let mut coef = DVector::zeros(m.ncols());
    let mut z = DVector::zeros(n);
    let mut w = DVector::zeros(n);

    for it in 1..=opts.max_iter {
        for i in 0..n {
            let mu = family.inverse_link(eta[i]);
            let d = family.mu_eta(eta[i]);
            w[i] = d * d / family.variance(mu);
            z[i] = eta[i] - offset[i] + (y[i] - mu) / d;
            if let Family::NegativeBinomial { theta } = family {
                // Observed information; the log link is not canonical here and
                // Fisher scoring crawls far from the optimum.
                let obs = theta * mu * (y[i] + theta) / ((mu + theta) * (mu + theta));
                z[i] = eta[i] - offset[i] + theta * (y[i] - mu) / ((mu + theta) * obs);
                w[i] = obs;
            }
        }
        let mut next = weighted_least_squares(m, &w, &z)?;
        let mut eta_next = m * &next + offset;
        let mut dev = family.deviance(y, &eta_next.map(|e| family.inverse_link(e)));
        let mut halvings = 0;
        // Halve toward the previous iterate on a non-finite or increasing deviance.
        while (!dev.is_finite() || dev > dev_old * (1.0 + 1e-12) + 1e-12) && it > 1 && halvings < 30 {
            next = (&next + &coef) * 0.5;
            eta_next = m * &next + offset;
            dev = family.deviance(y, &eta_next.map(|e| family.inverse_link(e)));
            halvings += 1;
        }
        if !dev.is_finite() {
            return Err(Error::Degenerate {
                reason: "deviance is not finite".into(),
                last: next.iter().cloned().collect(),
            });
        }
        let scale = 1.0 + next.amax();
        let step = (&next - &coef).amax();
        let converged =
            (dev - dev_old).abs() / (dev.abs() + 0.1) < opts.tol && step <= opts.tol * scale;
        coef = next;
        eta = eta_next;
        dev_old = dev;
        if converged {
            return Ok(IrlsOutcome { coef, eta, iterations: it, converged: true, deviance: dev });
        }
    }
    Ok(IrlsOutcome { coef, eta, iterations: opts.max_iter, converged: false, deviance: dev_old })
}

fn check_inputs(family: Family, y: &DVector<f64>, design: &DesignSplit) -> Result<()> {
    if y.len() != design.n() {
        return Err(Error::InvalidInput(format!(
            "response has {} entries, design has {} rows",
            y.len(),
            design.n()
        )));
    }
    family.check_response(y)
}

fn to_vec(v: &DVector<f64>) -> Vec<f64> {
    v.iter().cloned().collect()
}

/// Fits the null model with `beta` fixed at `beta0`.
pub fn fit_null(family: Family, y: &DVector<f64>, design: &DesignSplit, beta0: f64) -> Result<NullFit> {
    fit_null_with(family, y, design, beta0, &FitOptions::default())
}

pub fn fit_null_with(
    family: Family,
    y: &DVector<f64>,
    design: &DesignSplit,
    beta0: f64,
    opts: &FitOptions,
) -> Result<NullFit> {
    check_inputs(family, y, design)?;
    if !beta0.is_finite() {
        return Err(Error::InvalidInput(format!("beta0 must be finite, got {beta0}")));
    }
    let offset = design.offset_or_zero() + design.x() * beta0;
    let out = irls(family, y, design.z(), &offset, opts)?;
    let boundary = out.eta.iter().filter(|&&e| family.at_boundary(e)).count();
    if !out.converged {
        return Err(if boundary > 0 {
            Error::Degenerate {
                reason: format!("null model at beta0 = {beta0} diverges toward the boundary"),
                last: to_vec(&out.coef),
            }
        } else {
            Error::NonConvergence {
                iterations: out.iterations,
                deviance: out.deviance,
                last: to_vec(&out.coef),
            }
        });
    }
    if boundary == y.len() {
        return Err(Error::Degenerate {
            reason: format!("all fitted means at the support boundary for beta0 = {beta0}"),
            last: to_vec(&out.coef),
        });
    }
    finish_null(family, y, design, beta0, out.coef, out.eta, out.iterations, design.n() - design.p())
}

#[allow(clippy::too_many_arguments)]
fn finish_null(
    family: Family,
    y: &DVector<f64>,
    design: &DesignSplit,
    beta0: f64,
    gamma_hat: DVector<f64>,
    eta: DVector<f64>,
    iterations: usize,
    residual_dof: usize,
) -> Result<NullFit> {
    let mu = eta.map(|e| family.inverse_link(e));
    let dispersion = estimate_dispersion(family, y, &mu, residual_dof)?;
    let wq = working_quantities(family, &eta, dispersion);
    debug_assert_eq!(gamma_hat.len(), design.p());
    Ok(NullFit {
        family,
        beta0,
        gamma_hat,
        residual: y - &wq.mu,
        mu: wq.mu,
        eta,
        d: wq.d,
        v: wq.v,
        w: wq.w,
        dispersion,
        converged: true,
        iterations,
    })
}

/// Maximum likelihood fit of `(beta, gamma)`.
pub fn fit_full(family: Family, y: &DVector<f64>, design: &DesignSplit) -> Result<FullFit> {
    fit_full_with(family, y, design, &FitOptions::default())
}

pub fn fit_full_with(
    family: Family,
    y: &DVector<f64>,
    design: &DesignSplit,
    opts: &FitOptions,
) -> Result<FullFit> {
    check_inputs(family, y, design)?;
    let m = design.full_matrix();
    let out = irls(family, y, &m, &design.offset_or_zero(), opts)?;
    let boundary = out.eta.iter().any(|&e| family.at_boundary(e));
    if boundary {
        return Err(Error::Degenerate {
            reason: "fitted linear predictor beyond ±30 (separation or empty count group)".into(),
            last: to_vec(&out.coef),
        });
    }
    if !out.converged {
        return Err(Error::NonConvergence {
            iterations: out.iterations,
            deviance: out.deviance,
            last: to_vec(&out.coef),
        });
    }
    let beta_hat = out.coef[0];
    let gamma = out.coef.rows(1, design.p()).into_owned();
    let n = design.n();
    let at_estimate = finish_null(family, y, design, beta_hat, gamma, out.eta, out.iterations, n - design.p() - 1)?;

    // Model covariance: dispersion times the inverse of the dispersion-free information.
    let w0 = DVector::from_fn(n, |i, _| {
        let d = at_estimate.d[i];
        d * d / family.variance(at_estimate.mu[i])
    });
    let cov_bb = inverse_information_entry(&m, &w0)?;
    let se_model = (at_estimate.dispersion * cov_bb).sqrt();
    Ok(FullFit { beta_hat, se_model, at_estimate })
}

/// `[(Mᵀ diag(w) M)⁻¹]₀₀` from the triangular factor of `diag(sqrt w) M`.
pub(crate) fn inverse_information_entry(m: &DMatrix<f64>, w: &DVector<f64>) -> Result<f64> {
    let rinv = inverse_r_factor(m, w)?;
    Ok(rinv.row(0).norm_squared())
}

/// R⁻¹ where `diag(sqrt w) M = Q R`, so that `(Mᵀ W M)⁻¹ = R⁻¹ R⁻ᵀ`.
pub(crate) fn inverse_r_factor(m: &DMatrix<f64>, w: &DVector<f64>) -> Result<DMatrix<f64>> {
    let mut mw = m.clone();
    for (i, mut row) in mw.row_iter_mut().enumerate() {
        row *= w[i].sqrt();
    }
    let k = m.ncols();
    mw.qr()
        .r()
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .ok_or_else(|| Error::Singular("information matrix".into()))
}

/// Nuisance block of the score, `Zᵀ D V⁻¹ (y − μ)`.
pub fn nuisance_score(fit: &NullFit, design: &DesignSplit) -> DVector<f64> {
    let u = DVector::from_fn(design.n(), |i, _| fit.d[i] / fit.v[i] * fit.residual[i]);
    design.z().transpose() * u
}

/// Target block of the score, `xᵀ D V⁻¹ (y − μ)`.
pub fn target_score(fit: &NullFit, design: &DesignSplit) -> f64 {
    (0..design.n())
        .map(|i| design.x()[i] * fit.d[i] / fit.v[i] * fit.residual[i])
        .sum()
}
