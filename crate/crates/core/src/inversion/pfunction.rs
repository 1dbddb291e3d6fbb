use std::collections::HashMap;

use nalgebra::DVector;

use crate::flip::{sign_flip_test, Alternative, FlipEnsemble, Statistic};
use crate::glm::{DesignSplit, Family};
use crate::Result;

/// Which bound a one-sided p-value function serves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    /// Tests `H1: beta > beta0` for `beta0` below the estimate.
    Lower,
    /// Tests `H1: beta < beta0` for `beta0` above the estimate.
    Upper,
}

impl Side {
    pub fn alternative(self) -> Alternative {
        match self {
            Side::Lower => Alternative::Greater,
            Side::Upper => Alternative::Less,
        }
    }

    /// Sign of a move toward the estimate from this side.
    pub fn toward_estimate(self) -> f64 {
        match self {
            Side::Lower => 1.0,
            Side::Upper => -1.0,
        }
    }
}

/// Anything that maps a null value to a p-value. Implemented for closures so
/// the search routines can be driven by synthetic functions.
pub trait PValueSource {
    fn p_value(&mut self, beta0: f64) -> Result<f64>;
}

impl<F> PValueSource for F
where
    F: FnMut(f64) -> Result<f64>,
{
    fn p_value(&mut self, beta0: f64) -> Result<f64> {
        self(beta0)
    }
}

/// One-sided sign-flip p-value as a function of the null value. Every
/// evaluation reuses the same flip ensemble; results are cached on the exact
/// bit pattern of `beta0`.
pub struct PValueFunction<'a> {
    family: Family,
    y: &'a DVector<f64>,
    design: &'a DesignSplit,
    ensemble: &'a FlipEnsemble,
    side: Side,
    statistic: Statistic,
    cache: HashMap<u64, f64>,
    evaluations: usize,
}

impl<'a> PValueFunction<'a> {
    pub fn new(
        family: Family,
        y: &'a DVector<f64>,
        design: &'a DesignSplit,
        ensemble: &'a FlipEnsemble,
        side: Side,
        statistic: Statistic,
    ) -> Self {
        PValueFunction {
            family,
            y,
            design,
            ensemble,
            side,
            statistic,
            cache: HashMap::new(),
            evaluations: 0,
        }
    }

    pub fn side(&self) -> Side {
        self.side
    }

    /// Number of tests actually computed (cache hits excluded).
    pub fn evaluations(&self) -> usize {
        self.evaluations
    }

    pub fn eval(&mut self, beta0: f64) -> Result<f64> {
        let key = beta0.to_bits();
        if let Some(&p) = self.cache.get(&key) {
            return Ok(p);
        }
        self.evaluations += 1;
        let result = sign_flip_test(
            self.family,
            self.y,
            self.design,
            beta0,
            self.side.alternative(),
            self.ensemble,
            self.statistic,
        )?;
        self.cache.insert(key, result.p_value);
        Ok(result.p_value)
    }
}

impl PValueSource for PValueFunction<'_> {
    fn p_value(&mut self, beta0: f64) -> Result<f64> {
        self.eval(beta0)
    }
}
