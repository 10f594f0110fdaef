//! Prevalence and trend estimation from observational surveys whose
//! post-stratification weights are highly variable.
//!
//! The crate provides three families of estimators for a binary outcome
//! observed in a self-selected sample with known per-stratum population
//! margins:
//!
//! * design-based means (unweighted, post-stratified, weight-trimmed)
//!   with closed-form variances ([`design`]),
//! * weight-smoothing estimators backed by a binomial GLMM over the
//!   post-strata (exchangeable, linear or spline-smoothed stratum means)
//!   with analytical and parametric-bootstrap variances ([`smooth`],
//!   [`glmm`], [`resample`]),
//! * GREG-adjusted weight-smoothing estimators driven by trimmed
//!   pseudo-inclusion probabilities, with grouped-jackknife variances.
//!
//! A weekly/periodic extension estimates a smooth time trend of the
//! outcome ([`trend`]), and [`sim`] contains a Monte Carlo harness that
//! measures bias, variance, MSE, coverage and interval length of every
//! estimator over synthetic populations.

pub mod basis;
pub mod data;
pub mod design;
pub(crate) mod dist;
pub mod error;
pub mod glmm;
pub mod resample;
pub mod rng;
pub mod sim;
pub mod smooth;
pub mod trend;

pub use data::{PopulationMargins, StratumSummary, StratumWeights, SurveySample};
pub use error::Error;
pub use glmm::{Family, FitOptions, FittedGlmm, ModelSpec};
pub use resample::{BootstrapConfig, JackknifeConfig};
pub use sim::{PopulationModel, PopulationSize, ScenarioConfig};

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Logistic function, the inverse of [`logit`].
#[inline]
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Log-odds of a probability in (0, 1).
#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}
