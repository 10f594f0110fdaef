//! Weight-smoothing estimators and their GREG adjustment.
//!
//! The model-based estimator predicts nonsampled units with the fitted
//! stratum means; the GREG variant adds an inverse-probability-weighted
//! residual correction whose pseudo-inclusion probabilities come from
//! trimmed post-stratification weights.

use nalgebra::DVector;

use crate::data::{check_dims, MarginSlice, PopulationMargins, StratumSlice, StratumSummary};
use crate::error::Error;
use crate::glmm::{theta_quadratic, FittedGlmm};
use crate::Result;

/// Mean prediction estimator over one time point:
/// `(1/N) sum_h { n_h ybar_h + (N_h - n_h) mu_h }`.
///
/// `n_h ybar_h` enters as the raw positive count, so a census reproduces
/// the population mean exactly. Cells without sampled units contribute
/// `N_h mu_h`; the model predicts the whole cell.
pub fn ws_estimate_slice(mu: &[f64], s: &StratumSlice<'_>, m: &MarginSlice<'_>) -> Result<f64> {
    let strata = s.strata();
    if m.strata() != strata || mu.len() != strata {
        return Err(Error::DimensionMismatch(format!(
            "{} strata vs {} margins vs {} fitted means",
            strata,
            m.strata(),
            mu.len()
        )));
    }
    let mut total = 0.0;
    for h in 1..=strata {
        let n_h = s.counts[h - 1] as f64;
        let cap = m.counts[h - 1] as f64;
        total += s.positives[h - 1] as f64 + (cap - n_h) * mu[h - 1];
    }
    Ok(total / m.total() as f64)
}

/// Mean prediction estimator from a converged fit (no trend).
pub fn ws_estimate(
    fit: &FittedGlmm,
    summary: &StratumSummary,
    margins: &PopulationMargins,
) -> Result<f64> {
    check_dims(summary, margins)?;
    ws_estimate_slice(fit.mu_cells(), &summary.at(1), &margins.at(1))
}

/// First-order analytical variance
/// `(1/N^2) (N - n)' Theta (N - n)` with `Theta` the prediction
/// covariance of the fitted stratum means.
pub fn ws_variance_analytical(
    fit: &FittedGlmm,
    summary: &StratumSummary,
    margins: &PopulationMargins,
) -> Result<f64> {
    check_dims(summary, margins)?;
    let h = summary.strata();
    let d = DVector::from_fn(h, |i, _| {
        margins.count(i + 1, 1) as f64 - summary.count(i + 1, 1) as f64
    });
    let quad = theta_quadratic(fit, &d)?;
    let cap = margins.total() as f64;
    Ok((quad / (cap * cap)).max(0.0))
}

/// Trimmed pseudo-inclusion probabilities for self-selected samples.
///
/// Strata whose post-stratification weight exceeds `w0` get
/// `n_hat_h = (N_h/N) / (w0/n)`; the rest share the remaining sample size
/// through `gamma`. Empty cells carry `pi = n_hat = 0` sentinels and are
/// skipped by the GREG estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoInclusion {
    pub pi: Vec<f64>,
    pub n_hat: Vec<f64>,
    pub gamma: f64,
}

pub fn pseudo_inclusion(
    s: &StratumSlice<'_>,
    m: &MarginSlice<'_>,
    w0: f64,
) -> Result<PseudoInclusion> {
    let strata = s.strata();
    if m.strata() != strata {
        return Err(Error::DimensionMismatch(format!(
            "{} strata vs {} margins",
            strata,
            m.strata()
        )));
    }
    if w0 <= 0.0 {
        return Err(Error::AllTrimmed(w0));
    }
    let n = s.total() as f64;
    let cap = m.total() as f64;

    // trimmed strata first: their n_hat determines gamma
    let mut n_hat = vec![0.0; strata];
    let mut trimmed_total = 0.0;
    let mut untrimmed_units = 0.0;
    for h in 1..=strata {
        let n_h = s.counts[h - 1] as f64;
        if n_h == 0.0 {
            continue;
        }
        let w = (m.counts[h - 1] as f64 / cap) / (n_h / n);
        if w > w0 {
            let value = (m.counts[h - 1] as f64 / cap) / (w0 / n);
            n_hat[h - 1] = value;
            trimmed_total += value;
        } else {
            untrimmed_units += n_h;
        }
    }
    if untrimmed_units == 0.0 {
        return Err(Error::AllTrimmed(w0));
    }
    if trimmed_total >= n {
        return Err(Error::NegativeGamma);
    }
    let gamma = (n - trimmed_total) / untrimmed_units;
    let mut pi = vec![0.0; strata];
    for h in 1..=strata {
        let n_h = s.counts[h - 1] as f64;
        if n_h == 0.0 {
            continue;
        }
        if n_hat[h - 1] == 0.0 {
            n_hat[h - 1] = gamma * n_h;
        }
        pi[h - 1] = n_hat[h - 1] / m.counts[h - 1] as f64;
    }
    Ok(PseudoInclusion { pi, n_hat, gamma })
}

/// GREG-adjusted weight-smoothing estimator over one time point:
/// `(1/N) sum_h { (n_h/pi_h) ybar_h + (N_h - n_h/pi_h) mu_h }`.
///
/// In extreme weight configurations the point may fall slightly outside
/// `[0, 1]`; it is reported as-is (confidence intervals are clamped
/// downstream, the point never is).
pub fn ws_greg_estimate_slice(
    mu: &[f64],
    s: &StratumSlice<'_>,
    m: &MarginSlice<'_>,
    pi: &PseudoInclusion,
) -> Result<f64> {
    let strata = s.strata();
    if m.strata() != strata || mu.len() != strata || pi.pi.len() != strata {
        return Err(Error::DimensionMismatch(format!(
            "{} strata vs {} margins vs {} means vs {} inclusion probabilities",
            strata,
            m.strata(),
            mu.len(),
            pi.pi.len()
        )));
    }
    let mut total = 0.0;
    for h in 1..=strata {
        let n_h = s.counts[h - 1] as f64;
        let cap = m.counts[h - 1] as f64;
        if n_h == 0.0 {
            total += cap * mu[h - 1];
            continue;
        }
        let adjusted = n_h / pi.pi[h - 1];
        total += adjusted * s.ybar(h).unwrap() + (cap - adjusted) * mu[h - 1];
    }
    Ok(total / m.total() as f64)
}

/// GREG-adjusted estimator from a converged fit (no trend), with the
/// pseudo-inclusion probabilities derived at cutoff `w0`.
pub fn ws_greg_estimate(
    fit: &FittedGlmm,
    summary: &StratumSummary,
    margins: &PopulationMargins,
    w0: f64,
) -> Result<f64> {
    check_dims(summary, margins)?;
    let s = summary.at(1);
    let m = margins.at(1);
    let pi = pseudo_inclusion(&s, &m, w0)?;
    ws_greg_estimate_slice(fit.mu_cells(), &s, &m, &pi)
}
