//! Sign-flip score tests: ensembles of ±1 flips, flipped effective and
//! standardized score statistics, and one-sided p-values.

mod ensemble;
mod score;

pub use ensemble::FlipEnsemble;
pub use score::{effective_score, flip_variance, FlipScorer, Statistic, MIN_VARIANCE};
pub use test::{
    flipped_statistics, pvalue_from_stats, sign_flip_test, test_with_fit, Alternative,
    ScoreTestResult,
};
