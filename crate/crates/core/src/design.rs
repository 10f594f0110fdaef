//! Design-based prevalence estimators: unweighted, post-stratified and
//! weight-trimmed means with closed-form variances.
//!
//! Variances take the weighted-binomial form
//! `Var = n^{-2} sum_h n_h w_h^2 ybar_h (1 - ybar_h)` in the estimator's
//! final per-unit weights, with no finite-population correction.

use serde::{Deserialize, Serialize};

use crate::data::{MarginSlice, StratumSlice};
use crate::error::Error;
use crate::Result;

/// Which design-based estimator a weight vector belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DesignKind {
    /// Unweighted sample mean.
    Unw,
    /// Post-stratified mean.
    Psm,
    /// Weight-trimmed mean.
    Trim,
}

/// Point estimate with variance and a back-transformed interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub point: f64,
    pub variance: f64,
    pub ci: (f64, f64),
    pub level: f64,
    pub method: String,
    pub variance_method: String,
}

/// One design-based estimator, end to end: point, closed-form variance
/// and a logit-scale interval.
pub fn design_estimate(
    kind: DesignKind,
    s: &StratumSlice<'_>,
    m: &MarginSlice<'_>,
    w0: f64,
    level: f64,
) -> Result<EstimateResult> {
    let (point, variance) = design_point(kind, s, m, w0)?;
    let (ci, _) = crate::resample::confidence_interval_with_fallback(
        point,
        variance,
        level,
        crate::resample::CiScale::Logit,
    )?;
    let method = match kind {
        DesignKind::Unw => "unw",
        DesignKind::Psm => "psm",
        DesignKind::Trim => "trim",
    };
    Ok(EstimateResult {
        point,
        variance,
        ci,
        level,
        method: method.into(),
        variance_method: "analytical".into(),
    })
}

/// Unweighted sample prevalence `sum_h p_h ybar_h`.
pub fn unweighted_mean(s: &StratumSlice<'_>) -> Result<f64> {
    let n = s.total() as f64;
    if n == 0.0 {
        return Err(Error::EmptyFile);
    }
    let pos: u64 = s.positives.iter().sum();
    Ok(pos as f64 / n)
}

/// Post-stratified prevalence `sum_h P_h ybar_h`.
pub fn poststratified_mean(s: &StratumSlice<'_>, m: &MarginSlice<'_>) -> Result<f64> {
    check_slice_dims(s, m)?;
    let mut total = 0.0;
    for h in 1..=s.strata() {
        let ybar = s.ybar(h).ok_or(Error::EmptyStratum(h))?;
        total += m.share(h) * ybar;
    }
    Ok(total)
}

/// Per-unit weights of the trimmed estimator together with the
/// renormalizing constant.
#[derive(Debug, Clone, PartialEq)]
pub struct TrimmedWeights {
    pub weights: Vec<f64>,
    pub trimmed: Vec<bool>,
    pub gamma: f64,
}

/// Cap post-stratification weights at `w0` and rescale the rest so the
/// weighted sample size is preserved.
pub fn trimmed_weights(
    s: &StratumSlice<'_>,
    m: &MarginSlice<'_>,
    w0: f64,
) -> Result<TrimmedWeights> {
    check_slice_dims(s, m)?;
    if w0 <= 0.0 {
        return Err(Error::AllTrimmed(w0));
    }
    let strata = s.strata();
    let n = s.total() as f64;
    let mut raw = vec![0.0; strata];
    let mut trimmed = vec![false; strata];
    let mut trimmed_units = 0.0;
    let mut untrimmed_share = 0.0;
    for h in 1..=strata {
        let n_h = s.counts[h - 1] as f64;
        if n_h == 0.0 {
            return Err(Error::EmptyStratum(h));
        }
        let w = m.share(h) / (n_h / n);
        raw[h - 1] = w;
        if w > w0 {
            trimmed[h - 1] = true;
            trimmed_units += n_h;
        } else {
            untrimmed_share += m.share(h);
        }
    }
    if untrimmed_share == 0.0 {
        return Err(Error::AllTrimmed(w0));
    }
    // n_h w_h = n N_h / N, so the normalizer's denominator is n times the
    // untrimmed population share; with nothing trimmed gamma is exactly 1
    let gamma = if trimmed.iter().any(|&t| t) {
        (n - trimmed_units * w0) / (n * untrimmed_share)
    } else {
        1.0
    };
    let weights = raw
        .iter()
        .zip(&trimmed)
        .map(|(&w, &t)| if t { w0 } else { gamma * w })
        .collect();
    Ok(TrimmedWeights {
        weights,
        trimmed,
        gamma,
    })
}

/// Weight-trimming prevalence estimator,
/// `sum_untrimmed gamma P_h ybar_h + sum_trimmed w0 (n_h/n) ybar_h`.
pub fn trimmed_mean(s: &StratumSlice<'_>, m: &MarginSlice<'_>, w0: f64) -> Result<f64> {
    let tw = trimmed_weights(s, m, w0)?;
    let n = s.total() as f64;
    let mut kept = 0.0;
    let mut capped = 0.0;
    for h in 1..=s.strata() {
        let ybar = s.ybar(h).unwrap();
        if tw.trimmed[h - 1] {
            capped += w0 * (s.counts[h - 1] as f64 / n) * ybar;
        } else {
            kept += m.share(h) * ybar;
        }
    }
    Ok(tw.gamma * kept + capped)
}

/// Closed-form variance in the estimator's final per-unit weights.
pub fn design_variance(
    kind: DesignKind,
    s: &StratumSlice<'_>,
    m: &MarginSlice<'_>,
    w0: f64,
) -> Result<f64> {
    let weights: Vec<f64> = match kind {
        DesignKind::Unw => vec![1.0; s.strata()],
        DesignKind::Psm => {
            check_slice_dims(s, m)?;
            let n = s.total() as f64;
            (1..=s.strata())
                .map(|h| {
                    let n_h = s.counts[h - 1] as f64;
                    if n_h == 0.0 {
                        Err(Error::EmptyStratum(h))
                    } else {
                        Ok(m.share(h) / (n_h / n))
                    }
                })
                .collect::<Result<_>>()?
        }
        DesignKind::Trim => trimmed_weights(s, m, w0)?.weights,
    };
    let n = s.total() as f64;
    let mut var = 0.0;
    for h in 1..=s.strata() {
        let n_h = s.counts[h - 1] as f64;
        if n_h == 0.0 {
            if kind == DesignKind::Unw {
                continue;
            }
            return Err(Error::EmptyStratum(h));
        }
        let ybar = s.ybar(h).unwrap();
        var += n_h * weights[h - 1] * weights[h - 1] * ybar * (1.0 - ybar);
    }
    Ok(var / (n * n))
}

/// Point estimate plus variance for one design-based estimator.
pub fn design_point(
    kind: DesignKind,
    s: &StratumSlice<'_>,
    m: &MarginSlice<'_>,
    w0: f64,
) -> Result<(f64, f64)> {
    let point = match kind {
        DesignKind::Unw => unweighted_mean(s)?,
        DesignKind::Psm => poststratified_mean(s, m)?,
        DesignKind::Trim => trimmed_mean(s, m, w0)?,
    };
    let variance = design_variance(kind, s, m, w0)?;
    Ok((point, variance))
}

fn check_slice_dims(s: &StratumSlice<'_>, m: &MarginSlice<'_>) -> Result<()> {
    if s.strata() != m.strata() {
        return Err(Error::DimensionMismatch(format!(
            "{} sample strata vs {} margin strata",
            s.strata(),
            m.strata()
        )));
    }
    Ok(())
}
