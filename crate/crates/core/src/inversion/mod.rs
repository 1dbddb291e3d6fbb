//! Confidence intervals by inverting one-sided sign-flip tests.
//!
//! The lower bound inverts `H1: beta > beta0` and the upper bound
//! `H1: beta < beta0`. Bounds are located by walking outward from the
//! estimate in steps of ε until a test rejects, then bisecting toward the
//! estimate while always keeping the last rejected point, so the reported
//! bound is itself a rejected value.

mod bisect;
mod confint;
mod pfunction;

pub use bisect::{
    bisect_equitailed_bound, bisect_symmetric, bisect_symmetric_with, find_start, find_start_with, Start, MAX_EXPANSION,
};
pub use confint::{
    confint, confint_with_ensemble, initial_epsilon, initial_epsilon_with, CiConfig,
    ConfidenceInterval, FlipMethod, IntervalMethod,
};
pub use pfunction::{PValueFunction, PValueSource, Side};

use nalgebra::DVector;

use crate::flip::{FlipEnsemble, Statistic};
use crate::glm::{DesignSplit, Family};
use crate::{Error, Result};

/// One-sided p-values on a sorted grid of null values, all with the same
/// ensemble. Points whose null fit fails are `None`.
pub fn pvalue_curve(
    family: Family,
    y: &DVector<f64>,
    design: &DesignSplit,
    grid: &[f64],
    side: Side,
    ensemble: &FlipEnsemble,
    statistic: Statistic,
) -> Result<Vec<(f64, Option<f64>)>> {
    if grid.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::InvalidInput("grid must be sorted ascending".into()));
    }
    let mut fp = PValueFunction::new(family, y, design, ensemble, side, statistic);
    Ok(grid
        .iter()
        .map(|&b| match fp.eval(b) {
            Ok(p) => (b, Some(p)),
            Err(e) => {
                log::debug!("p-value at {b} unavailable: {e}");
                (b, None)
            }
        })
        .collect())
}

/// Adjacent pairs where the curve moves against its expected direction:
/// decreasing for the lower side, increasing for the upper side. Missing
/// points are skipped.
pub fn monotonicity_violations(curve: &[(f64, Option<f64>)], side: Side) -> usize {
    let values: Vec<f64> = curve.iter().filter_map(|(_, p)| *p).collect();
    values
        .windows(2)
        .filter(|w| match side {
            Side::Lower => w[1] < w[0],
            Side::Upper => w[1] > w[0],
        })
        .count()
}

/// `n` equispaced points from `from` to `to` inclusive.
pub fn equispaced(from: f64, to: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![from],
        _ => (0..n)
            .map(|k| from + (to - from) * k as f64 / (n - 1) as f64)
            .collect(),
    }
}
