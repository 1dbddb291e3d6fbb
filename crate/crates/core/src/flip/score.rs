use nalgebra::DVector;

use crate::glm::{DesignSplit, NullFit, Projector};
use crate::{Error, Result};

/// Variances below this are treated as zero.
pub const MIN_VARIANCE: f64 = 1e-14;

/// Which flipped statistic to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Statistic {
    /// `S(F) = n^{-1/2} xᵀ W^{1/2} (I − H) F V^{-1/2} (y − μ̂)`.
    Effective,
    /// `S(F) / V(S(F))^{1/2}`.
    Standardized,
}

impl Statistic {
    pub fn name(&self) -> &'static str {
        match self {
            Statistic::Effective => "effective",
            Statistic::Standardized => "standardized",
        }
    }
}

/// Precomputed pieces of the flipped score for one null fit.
///
/// With `a = (I − H) W^{1/2} x` and `r = V^{-1/2} (y − μ̂)`, the effective
/// score is `n^{-1/2} Σ f_i a_i r_i` and its variance is
/// `n^{-1} ‖(I − H) F a‖²`.
#[derive(Debug, Clone)]
pub struct FlipScorer {
    projected_x: DVector<f64>,
    contributions: DVector<f64>,
    projector: Projector,
    inv_sqrt_n: f64,
}

impl FlipScorer {
    pub fn new(fit: &NullFit, design: &DesignSplit) -> Result<Self> {
        let n = design.n();
        if fit.mu.len() != n {
            return Err(Error::InvalidInput("fit and design sizes differ".into()));
        }
        let projector = Projector::new(design.z(), &fit.w)?;
        let wx = DVector::from_fn(n, |i, _| fit.w[i].sqrt() * design.x()[i]);
        let projected_x = projector.residual(&wx);
        let contributions =
            DVector::from_fn(n, |i, _| projected_x[i] * fit.residual[i] / fit.v[i].sqrt());
        Ok(FlipScorer { projected_x, contributions, projector, inv_sqrt_n: 1.0 / (n as f64).sqrt() })
    }

    pub fn n(&self) -> usize {
        self.contributions.len()
    }

    pub fn effective(&self, flip: &[i8]) -> f64 {
        debug_assert_eq!(flip.len(), self.n());
        let s: f64 = flip
            .iter()
            .zip(self.contributions.iter())
            .map(|(&f, &c)| if f < 0 { -c } else { c })
            .sum();
        s * self.inv_sqrt_n
    }

    pub fn variance(&self, flip: &[i8]) -> f64 {
        let fa = DVector::from_fn(self.n(), |i, _| f64::from(flip[i]) * self.projected_x[i]);
        self.projector.residual_norm_squared(&fa) * self.inv_sqrt_n * self.inv_sqrt_n
    }

    pub fn standardized(&self, flip: &[i8]) -> Result<f64> {
        let var = self.variance(flip);
        if var < MIN_VARIANCE {
            return Err(Error::ZeroVariance { flip: 0, value: var });
        }
        Ok(self.effective(flip) / var.sqrt())
    }

    pub fn statistic(&self, kind: Statistic, flip: &[i8]) -> Result<f64> {
        match kind {
            Statistic::Effective => Ok(self.effective(flip)),
            Statistic::Standardized => self.standardized(flip),
        }
    }
}

/// Flipped effective score for a single sign vector.
pub fn effective_score(fit: &NullFit, design: &DesignSplit, flip: &[i8]) -> Result<f64> {
    check_flip(design, flip)?;
    Ok(FlipScorer::new(fit, design)?.effective(flip))
}

/// Variance of the flipped effective score,
/// `n^{-1} xᵀ W^{1/2} (I−H) F (I−H) F (I−H) W^{1/2} x`.
pub fn flip_variance(fit: &NullFit, design: &DesignSplit, flip: &[i8]) -> Result<f64> {
    check_flip(design, flip)?;
    let var = FlipScorer::new(fit, design)?.variance(flip);
    if var < MIN_VARIANCE {
        return Err(Error::ZeroVariance { flip: 0, value: var });
    }
    Ok(var)
}

fn check_flip(design: &DesignSplit, flip: &[i8]) -> Result<()> {
    if flip.len() != design.n() {
        return Err(Error::InvalidInput(format!(
            "flip has length {}, expected {}",
            flip.len(),
            design.n()
        )));
    }
    if flip.iter().any(|&f| f != 1 && f != -1) {
        return Err(Error::InvalidInput("flip entries must be +1 or -1".into()));
    }
    Ok(())
}
