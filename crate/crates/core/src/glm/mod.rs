//! Exponential-dispersion GLM families and IRLS fits with an offset.

mod design;
mod family;
mod fit;
mod projector;

pub use design::{DesignSplit, RANK_TOL};
pub use family::{
    estimate_dispersion, working_quantities, Family, WorkingQuantities, DISPERSION_FLOOR, ETA_BOUND,
};
pub use fit::{
    fit_full, fit_full_with, fit_null, fit_null_with, nuisance_score, target_score, FitOptions,
    FullFit, NullFit,
};
pub use projector::Projector;

pub(crate) use fit::inverse_r_factor;
