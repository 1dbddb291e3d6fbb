//! Robust confidence intervals for a scalar coefficient in generalized linear
//! models, obtained by inverting one-sided sign-flip score tests.
//!
//! The crate is organized bottom-up:
//!
//! - [`glm`]: families, design validation and IRLS fits with an offset.
//! - [`flip`]: sign-flip ensembles, flipped effective/standardized scores and p-values.
//! - [`inversion`]: equitailed and symmetric intervals by conservative bisection.
//! - [`baselines`]: Wald and sandwich intervals.
//! - [`sim`]: coverage simulations and the p-value monotonicity experiment.
//! - [`deg`]: per-gene Poisson/negative-binomial interval comparison.
//! - [`cli`]: the `flipci` command-line front end.

pub mod baselines;
pub mod cli;
pub mod deg;
mod error;
pub mod flip;
pub mod glm;
pub mod inversion;
pub mod quantile;
pub mod report;
pub mod seeding;
pub mod sim;

pub use error::{Error, Result};
