//! Time-trend estimation: the weight-smoothing model with an additive
//! smooth time effect, per-time-point estimators and variances.
//!
//! On the logit scale the model is `logit(mu_{h,t}) = delta_t + delta*_h`
//! with the time effect carried by a penalized spline. Estimates, GREG
//! adjustments and analytical variances are the per-time analogues of the
//! overall-prevalence formulas, the variance using the `t`-th diagonal
//! block of the full prediction covariance.

use nalgebra::DVector;

use crate::data::{check_dims, PopulationMargins, StratumSummary};
use crate::error::Error;
use crate::glmm::{build_design, fit_pql, theta_quadratic, FitOptions, FittedGlmm, ModelSpec};
use crate::smooth::{pseudo_inclusion, ws_estimate_slice, ws_greg_estimate_slice, PseudoInclusion};
use crate::Result;

/// A converged trend-model fit.
#[derive(Debug, Clone)]
pub struct TrendFit {
    pub fit: FittedGlmm,
}

impl TrendFit {
    pub fn strata(&self) -> usize {
        self.fit.design.h
    }

    pub fn time_points(&self) -> usize {
        self.fit.design.t
    }

    /// Fitted means for one time point.
    pub fn mu_at_time(&self, t: usize) -> &[f64] {
        let h = self.strata();
        &self.fit.mu_cells()[(t - 1) * h..t * h]
    }
}

/// Fit the weight-smoothing model with smooth time trend.
pub fn fit_trend_model(
    summary: &StratumSummary,
    spec: &ModelSpec,
    opts: &FitOptions,
) -> Result<TrendFit> {
    let t = summary.time_points();
    if t < 2 {
        return Err(Error::InvalidSpec("trend model requires T >= 2".into()));
    }
    let mut spec = spec.clone();
    spec.trend = true;
    let design = build_design(&spec, summary.strata(), Some(t))?;
    let fit = fit_pql(summary, design, opts)?;
    Ok(TrendFit { fit })
}

/// Per-time mean prediction estimates from fitted cell means.
pub fn trend_estimates(
    mu_cells: &[f64],
    summary: &StratumSummary,
    margins: &PopulationMargins,
) -> Result<Vec<f64>> {
    check_dims(summary, margins)?;
    let h = summary.strata();
    if mu_cells.len() != h * summary.time_points() {
        return Err(Error::DimensionMismatch(format!(
            "{} fitted means for {} cells",
            mu_cells.len(),
            h * summary.time_points()
        )));
    }
    (1..=summary.time_points())
        .map(|t| {
            ws_estimate_slice(
                &mu_cells[(t - 1) * h..t * h],
                &summary.at(t),
                &margins.at(t),
            )
        })
        .collect()
}

/// Per-time trimmed pseudo-inclusion probabilities (same cutoff at every
/// time point, weights computed within each time point).
pub fn trend_pseudo_inclusion(
    summary: &StratumSummary,
    margins: &PopulationMargins,
    w0: f64,
) -> Result<Vec<PseudoInclusion>> {
    check_dims(summary, margins)?;
    (1..=summary.time_points())
        .map(|t| pseudo_inclusion(&summary.at(t), &margins.at(t), w0))
        .collect()
}

/// Per-time GREG-adjusted estimates.
pub fn trend_greg_estimates(
    mu_cells: &[f64],
    summary: &StratumSummary,
    margins: &PopulationMargins,
    pi: &[PseudoInclusion],
) -> Result<Vec<f64>> {
    check_dims(summary, margins)?;
    let h = summary.strata();
    if pi.len() != summary.time_points() {
        return Err(Error::DimensionMismatch(format!(
            "{} inclusion-probability sets for {} time points",
            pi.len(),
            summary.time_points()
        )));
    }
    (1..=summary.time_points())
        .map(|t| {
            ws_greg_estimate_slice(
                &mu_cells[(t - 1) * h..t * h],
                &summary.at(t),
                &margins.at(t),
                &pi[t - 1],
            )
        })
        .collect()
}

/// Per-time analytical variances
/// `(1/N_t^2) (N_t - n_t)' Theta_t (N_t - n_t)`, `Theta_t` being the
/// `t`-th diagonal block of the full prediction covariance.
pub fn trend_variance_analytical(
    trend: &TrendFit,
    summary: &StratumSummary,
    margins: &PopulationMargins,
) -> Result<Vec<f64>> {
    check_dims(summary, margins)?;
    let h = trend.strata();
    let t_points = trend.time_points();
    let cells = h * t_points;
    let mut out = Vec::with_capacity(t_points);
    for t in 1..=t_points {
        let mut d = DVector::zeros(cells);
        for hi in 1..=h {
            d[(t - 1) * h + (hi - 1)] = margins.count(hi, t) as f64 - summary.count(hi, t) as f64;
        }
        let quad = theta_quadratic(&trend.fit, &d)?;
        let cap = margins.total_at(t) as f64;
        out.push((quad / (cap * cap)).max(0.0));
    }
    Ok(out)
}
