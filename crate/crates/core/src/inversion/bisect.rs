use super::pfunction::{PValueSource, Side};
use crate::{Error, Result};

/// Maximum number of ε steps taken away from the estimate while looking for
/// a rejected starting point.
pub const MAX_EXPANSION: usize = 10;

/// Outcome of the outward walk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Start {
    /// First rejected point found.
    Found(f64),
    /// No rejection within `MAX_EXPANSION * ε`, or the null model degenerated.
    Unbounded,
}

/// Walks `beta_hat ∓ i ε`, `i = 1..=10`, away from the estimate on `side`
/// and returns the first point with p-value below `threshold`. A degenerate
/// null fit along the walk ends the search as unbounded.
pub fn find_start<P: PValueSource>(
    fp: &mut P,
    side: Side,
    beta_hat: f64,
    epsilon: f64,
    threshold: f64,
) -> Result<Start> {
    find_start_with(fp, side, beta_hat, epsilon, threshold, MAX_EXPANSION)
}

pub fn find_start_with<P: PValueSource>(
    fp: &mut P,
    side: Side,
    beta_hat: f64,
    epsilon: f64,
    threshold: f64,
    max_steps: usize,
) -> Result<Start> {
    let away = -side.toward_estimate();
    for i in 1..=max_steps {
        let beta = beta_hat + away * i as f64 * epsilon;
        match fp.p_value(beta) {
            Ok(p) if p < threshold => return Ok(Start::Found(beta)),
            Ok(_) => {}
            Err(Error::Degenerate { .. }) => return Ok(Start::Unbounded),
            Err(e) => return Err(e),
        }
    }
    Ok(Start::Unbounded)
}

/// Conservative bisection shared by both interval shapes.
///
/// Starting from a rejected point `start`, moves by half the previous step
/// toward the estimate (`toward = ±1`) after a rejection and away from it
/// otherwise, until the step falls below `tol`. Returns the last rejected
/// point, i.e. the rejected point closest to the estimate found on the path.
fn conservative_bisect<F>(mut reject: F, start: f64, toward: f64, epsilon: f64, tol: f64) -> Result<f64>
where
    F: FnMut(f64) -> Result<bool>,
{
    if !(tol > 0.0 && epsilon > 0.0) {
        return Err(Error::InvalidInput(format!(
            "bisection needs positive step and tolerance, got epsilon = {epsilon}, tol = {tol}"
        )));
    }
    let mut point = start;
    let mut bound = start;
    let mut step = epsilon;
    let mut dir = toward;
    loop {
        step /= 2.0;
        point += dir * step;
        let rejected = reject(point)?;
        if rejected {
            bound = point;
        }
        if step < tol {
            return Ok(bound);
        }
        dir = if rejected { toward } else { -toward };
    }
}

/// Equitailed bound on one side. `start_outside` must be rejected
/// (`fp < alpha_half`); the search bracket is `[start, start + ε]` toward the
/// estimate.
pub fn bisect_equitailed_bound<P: PValueSource>(
    fp: &mut P,
    start_outside: f64,
    epsilon: f64,
    tol: f64,
    alpha_half: f64,
    side: Side,
) -> Result<f64> {
    conservative_bisect(
        |b| Ok(fp.p_value(b)? < alpha_half),
        start_outside,
        side.toward_estimate(),
        epsilon,
        tol,
    )
}

/// Half-width of the symmetric interval: the conservative approximation of
/// `sup{δ : fp_minus(β̂ − δ) + fp_plus(β̂ + δ) >= α}`. Returns `+∞` when no
/// rejected half-width is found within `10 ε`.
pub fn bisect_symmetric<M: PValueSource, Q: PValueSource>(
    fp_minus: &mut M,
    fp_plus: &mut Q,
    beta_hat: f64,
    epsilon: f64,
    tol: f64,
    alpha: f64,
) -> Result<f64> {
    bisect_symmetric_with(fp_minus, fp_plus, beta_hat, epsilon, tol, alpha, MAX_EXPANSION)
}

pub fn bisect_symmetric_with<M: PValueSource, Q: PValueSource>(
    fp_minus: &mut M,
    fp_plus: &mut Q,
    beta_hat: f64,
    epsilon: f64,
    tol: f64,
    alpha: f64,
    max_steps: usize,
) -> Result<f64> {
    let mut p_sum = |delta: f64| -> Result<f64> {
        Ok(fp_minus.p_value(beta_hat - delta)? + fp_plus.p_value(beta_hat + delta)?)
    };
    let mut start = None;
    for i in 1..=max_steps {
        let delta = i as f64 * epsilon;
        match p_sum(delta) {
            Ok(p) if p < alpha => {
                start = Some(delta);
                break;
            }
            Ok(_) => {}
            Err(Error::Degenerate { .. }) => return Ok(f64::INFINITY),
            Err(e) => return Err(e),
        }
    }
    let Some(start) = start else {
        return Ok(f64::INFINITY);
    };
    conservative_bisect(|d| Ok(p_sum(d)? < alpha), start, -1.0, epsilon, tol)
}
