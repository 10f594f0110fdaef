//! Resampling variance estimation: parametric bootstrap for the
//! weight-smoothing estimators, grouped jackknife for the GREG-adjusted
//! ones, and back-transformed confidence intervals.
//!
//! Replicates draw from independent seeded streams, so variances are
//! bit-identical at any parallelism level.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{PopulationMargins, StratumSummary};
use crate::dist::hypergeometric_draw;
use crate::error::Error;
use crate::glmm::{fit_pql, BlockKind, FitOptions, FittedGlmm};
use crate::rng::{domain, stream_rng};
use crate::smooth::{ws_greg_estimate_slice, PseudoInclusion};
use crate::trend::{trend_estimates, trend_pseudo_inclusion};
use crate::{expit, logit, Result};

/// Parametric-bootstrap controls.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BootstrapConfig {
    /// Number of bootstrap populations; at least 100 is advisable.
    pub replicates: usize,
    pub seed: u64,
}

/// Grouped-jackknife controls.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct JackknifeConfig {
    pub groups: usize,
    pub seed: u64,
}

/// One synthetic population regenerated from a fit.
#[derive(Debug, Clone)]
pub struct BootstrapPopulation {
    /// Cell success probabilities of the generating model.
    pub probs: Vec<f64>,
    /// Realized positives per cell.
    pub positives: Vec<u64>,
    /// Realized population mean per time point.
    pub means: Vec<f64>,
}

/// Regenerate a finite population from the fitted model.
///
/// Spline coefficients are held at their empirical Bayes predictions
/// (they carry the mean structure); i.i.d. stratum deviations are drawn
/// fresh from `N(0, sigma^2)`, and the spline stratum block of the NPAR
/// model receives fresh coefficient noise on top of its predictions.
pub fn bootstrap_population(
    fit: &FittedGlmm,
    margins: &PopulationMargins,
    rng: &mut impl Rng,
) -> Result<BootstrapPopulation> {
    let design = &fit.design;
    if margins.strata() != design.h || margins.time_points() != design.t {
        return Err(Error::DimensionMismatch(format!(
            "margins are {}x{} but the fit is {}x{}",
            margins.strata(),
            margins.time_points(),
            design.h,
            design.t
        )));
    }
    let mut eta = &design.x * &fit.beta;
    for (j, block) in design.blocks.iter().enumerate() {
        let sigma = fit.theta[j].max(0.0).sqrt();
        let cols = block.cols.clone();
        let q = cols.len();
        let mut coef = DVector::zeros(q);
        match block.kind {
            BlockKind::StratumIid => {
                for k in 0..q {
                    let e: f64 = StandardNormal.sample(rng);
                    coef[k] = sigma * e;
                }
            }
            BlockKind::StratumSpline => {
                for k in 0..q {
                    let e: f64 = StandardNormal.sample(rng);
                    coef[k] = fit.b[cols.start + k] + sigma * e;
                }
            }
            BlockKind::TimeSpline => {
                for k in 0..q {
                    coef[k] = fit.b[cols.start + k];
                }
            }
        }
        eta += design.z.columns(cols.start, q) * coef;
    }

    let cells = design.cells();
    let mut probs = Vec::with_capacity(cells);
    let mut positives = Vec::with_capacity(cells);
    for i in 0..cells {
        let p = expit(eta[i]);
        probs.push(p);
        let cap = margins.cell_counts()[i];
        let draw = Binomial::new(cap, p)
            .map_err(|e| Error::NumericalBreakdown(format!("binomial: {e}")))?
            .sample(rng);
        positives.push(draw);
    }
    let mut means = Vec::with_capacity(design.t);
    for t in 1..=design.t {
        let total: u64 = (1..=design.h)
            .map(|h| positives[(t - 1) * design.h + (h - 1)])
            .sum();
        means.push(total as f64 / margins.total_at(t) as f64);
    }
    Ok(BootstrapPopulation {
        probs,
        positives,
        means,
    })
}

/// Stratified simple random sample (without replacement) from a
/// bootstrap population, with the original per-cell sample sizes.
pub fn bootstrap_sample(
    population: &BootstrapPopulation,
    margins: &PopulationMargins,
    counts: &[u64],
    rng: &mut impl Rng,
) -> Result<StratumSummary> {
    let h = margins.strata();
    let t = margins.time_points();
    let mut positives = Vec::with_capacity(counts.len());
    for (i, &n) in counts.iter().enumerate() {
        let cap = margins.cell_counts()[i];
        if n > cap {
            return Err(Error::OversampledStratum {
                h: i % h + 1,
                n,
                cap,
            });
        }
        if n == 0 {
            positives.push(0);
            continue;
        }
        let draw = hypergeometric_draw(rng, cap, population.positives[i], n);
        positives.push(draw);
    }
    StratumSummary::from_cells(h, t, counts.to_vec(), positives)
}

/// Bootstrap variance report; `dropped` counts replicates whose refit
/// failed even after one retry from shrunken starting values.
#[derive(Debug, Clone)]
pub struct BootstrapVariance {
    /// Per-time-point variance (a single entry without a trend).
    pub variance: Vec<f64>,
    pub used: usize,
    pub dropped: usize,
}

/// Parametric-bootstrap variance of the weight-smoothing estimator:
/// regenerate populations, re-draw stratified samples, refit, and
/// average the squared gaps between re-estimates and realized bootstrap
/// population means.
pub fn bootstrap_variance(
    fit: &FittedGlmm,
    summary: &StratumSummary,
    margins: &PopulationMargins,
    cfg: &BootstrapConfig,
) -> Result<BootstrapVariance> {
    if cfg.replicates == 0 {
        return Err(Error::InsufficientReplicates(
            "bootstrap needs B >= 1".into(),
        ));
    }
    let counts = summary.cell_counts().to_vec();
    let t_points = summary.time_points();

    let deviations: Vec<Option<Vec<f64>>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream_rng(cfg.seed, domain::BOOTSTRAP, b as u64);
            let population = bootstrap_population(fit, margins, &mut rng).ok()?;
            let sample = bootstrap_sample(&population, margins, &counts, &mut rng).ok()?;
            let refit = fit_replicate(fit, &sample)?;
            let estimates = trend_estimates(refit.mu_cells(), &sample, margins).ok()?;
            Some(
                estimates
                    .iter()
                    .zip(&population.means)
                    .map(|(est, truth)| est - truth)
                    .collect(),
            )
        })
        .collect();

    let mut variance = vec![0.0; t_points];
    let mut used = 0;
    for dev in deviations.iter().flatten() {
        used += 1;
        for (t, d) in dev.iter().enumerate() {
            variance[t] += d * d;
        }
    }
    if used == 0 {
        return Err(Error::InsufficientReplicates(
            "every bootstrap replicate failed to refit".into(),
        ));
    }
    for v in &mut variance {
        *v /= used as f64;
    }
    let dropped = cfg.replicates - used;
    if dropped > 0 {
        log::warn!(
            "bootstrap: dropped {dropped} of {} replicates",
            cfg.replicates
        );
    }
    Ok(BootstrapVariance {
        variance,
        used,
        dropped,
    })
}

/// Refit the parent model on replicate data, warm-started from the
/// parent fit; retried once from shrunken starting values.
fn fit_replicate(parent: &FittedGlmm, sample: &StratumSummary) -> Option<FittedGlmm> {
    let warm = FitOptions::warm_from(parent);
    match fit_pql(sample, parent.design.clone(), &warm) {
        Ok(fit) => Some(fit),
        Err(_) => {
            let tighter: Vec<f64> = sample
                .cell_counts()
                .iter()
                .zip(sample.cell_positives())
                .map(|(&n, &k)| (k as f64 + 2.0) / (n as f64 + 4.0))
                .collect();
            let opts = FitOptions {
                start_mu: Some(tighter),
                ..FitOptions::default()
            };
            fit_pql(sample, parent.design.clone(), &opts).ok()
        }
    }
}

// ---------------------------------------------------------------------------
// Grouped jackknife
// ---------------------------------------------------------------------------

/// Partition `n` sorted units into `G` subgroups, one element per
/// consecutive sorting block of size `G` (Procedure-style grouping).
///
/// `keys` must be the units' `(t, stratum)` pairs; units are stably
/// sorted by time then stratum, blocks restart at each time point, and
/// the units of each block are dealt to subgroups after a seeded
/// shuffle. The subgroups always partition `0..n` with sizes differing
/// by at most one.
pub fn jackknife_groups(
    keys: &[(usize, usize)],
    groups: usize,
    rng: &mut impl Rng,
) -> Vec<Vec<usize>> {
    let n = keys.len();
    let groups = groups.min(n).max(1);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| keys[i]);

    let mut out = vec![Vec::new(); groups];
    let mut start = 0;
    while start < n {
        let t = keys[order[start]].0;
        let mut end = start;
        while end < n && keys[order[end]].0 == t {
            end += 1;
        }
        // blocks of size `groups` within this time segment
        let mut lo = start;
        while lo < end {
            let hi = (lo + groups).min(end);
            let mut members: Vec<usize> = order[lo..hi].to_vec();
            // Fisher-Yates
            for i in (1..members.len()).rev() {
                let j = rng.random_range(0..=i);
                members.swap(i, j);
            }
            if members.len() == groups {
                for (slot, &unit) in members.iter().enumerate() {
                    out[slot].push(unit);
                }
            } else {
                // remainder block: deal to the least-filled subgroups so
                // sizes never differ by more than one
                let mut slots: Vec<usize> = (0..groups).collect();
                slots.sort_by_key(|&g| (out[g].len(), g));
                for (&slot, &unit) in slots.iter().zip(&members) {
                    out[slot].push(unit);
                }
            }
            lo = hi;
        }
        start = end;
    }
    out
}

/// Grouped-jackknife variance over leave-one-group-out re-estimates:
/// `(G-1)/G * sum_g (est_g - mean)^2`, elementwise over time points.
///
/// The closure receives the indices removed for replicate `g` and
/// returns the re-estimate; any failure aborts the whole variance.
pub fn jackknife_variance<F>(groups: &[Vec<usize>], estimator: F) -> Result<Vec<f64>>
where
    F: Fn(&[usize]) -> Result<Vec<f64>> + Sync,
{
    let g = groups.len();
    if g < 2 {
        return Err(Error::InsufficientReplicates(
            "jackknife needs G >= 2".into(),
        ));
    }
    let estimates: Vec<Result<Vec<f64>>> = groups
        .par_iter()
        .map(|removed| estimator(removed))
        .collect();
    let mut collected = Vec::with_capacity(g);
    for est in estimates {
        collected.push(est?);
    }
    let t_points = collected[0].len();
    let mut mean = vec![0.0; t_points];
    for est in &collected {
        for (t, e) in est.iter().enumerate() {
            mean[t] += e;
        }
    }
    for m in &mut mean {
        *m /= g as f64;
    }
    let mut variance = vec![0.0; t_points];
    for est in &collected {
        for (t, e) in est.iter().enumerate() {
            variance[t] += (e - mean[t]) * (e - mean[t]);
        }
    }
    let scale = (g as f64 - 1.0) / g as f64;
    for v in &mut variance {
        *v *= scale;
    }
    Ok(variance)
}

/// Synthesize the sorted unit list of an aggregated sample: `(t, h)` keys
/// plus binary outcomes, positives first within each cell.
pub(crate) fn synthesize_units(summary: &StratumSummary) -> (Vec<(usize, usize)>, Vec<u8>) {
    let mut keys = Vec::with_capacity(summary.total() as usize);
    let mut ys = Vec::with_capacity(summary.total() as usize);
    for t in 1..=summary.time_points() {
        for h in 1..=summary.strata() {
            let n = summary.count(h, t);
            let k = summary.positives(h, t);
            for i in 0..n {
                keys.push((t, h));
                ys.push(u8::from(i < k));
            }
        }
    }
    (keys, ys)
}

/// Remove the listed units from a summary.
pub(crate) fn reduce_summary(
    summary: &StratumSummary,
    keys: &[(usize, usize)],
    ys: &[u8],
    removed: &[usize],
) -> Result<StratumSummary> {
    let h = summary.strata();
    let mut counts = summary.cell_counts().to_vec();
    let mut positives = summary.cell_positives().to_vec();
    for &i in removed {
        let (t, hi) = keys[i];
        let idx = (t - 1) * h + (hi - 1);
        counts[idx] -= 1;
        positives[idx] -= u64::from(ys[i]);
    }
    StratumSummary::from_cells(h, summary.time_points(), counts, positives)
}

/// Jackknife variance of the GREG-adjusted weight-smoothing estimator
/// (per time point). The pseudo-inclusion probabilities computed on the
/// full sample stay frozen across replicates; the model is refit on each
/// reduced sample.
pub fn greg_jackknife_variance(
    fit: &FittedGlmm,
    summary: &StratumSummary,
    margins: &PopulationMargins,
    w0: f64,
    cfg: &JackknifeConfig,
) -> Result<Vec<f64>> {
    let pi = trend_pseudo_inclusion(summary, margins, w0)?;
    let (keys, ys) = synthesize_units(summary);
    let mut rng = stream_rng(cfg.seed, domain::JACKKNIFE, 0);
    let groups = jackknife_groups(&keys, cfg.groups, &mut rng);
    jackknife_variance(&groups, |removed| {
        let reduced = reduce_summary(summary, &keys, &ys, removed)?;
        let refit = fit_replicate(fit, &reduced).ok_or_else(|| {
            Error::InsufficientReplicates("jackknife replicate failed to refit".into())
        })?;
        greg_estimates_frozen(&refit, &reduced, margins, &pi)
    })
}

/// GREG estimates on (possibly reduced) data with frozen inclusion
/// probabilities.
pub(crate) fn greg_estimates_frozen(
    fit: &FittedGlmm,
    summary: &StratumSummary,
    margins: &PopulationMargins,
    pi: &[PseudoInclusion],
) -> Result<Vec<f64>> {
    let h = summary.strata();
    (1..=summary.time_points())
        .map(|t| {
            ws_greg_estimate_slice(
                &fit.mu_cells()[(t - 1) * h..t * h],
                &summary.at(t),
                &margins.at(t),
                &pi[t - 1],
            )
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Confidence intervals
// ---------------------------------------------------------------------------

/// Scale on which the normal-reference interval is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CiScale {
    /// Delta-method interval on the logit scale, back-transformed into
    /// `[0, 1]` (the default).
    Logit,
    /// Plain normal interval, clamped to `[0, 1]`.
    Identity,
}

fn z_quantile(level: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&level) || level <= 0.0 {
        return Err(Error::InvalidSpec(format!(
            "confidence level {level} not in (0, 1)"
        )));
    }
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(normal.inverse_cdf(0.5 + level / 2.0))
}

/// Normal-reference confidence interval for a prevalence estimate.
///
/// On the logit scale the standard error is mapped through the delta
/// method, `se_logit = sqrt(var) / (p (1 - p))`, and the interval is
/// back-transformed; a point estimate outside `(0, 1)` is a
/// [`Error::DegeneratePoint`].
pub fn confidence_interval(
    point: f64,
    variance: f64,
    level: f64,
    scale: CiScale,
) -> Result<(f64, f64)> {
    if variance < 0.0 {
        return Err(Error::NumericalBreakdown(format!(
            "negative variance {variance}"
        )));
    }
    if variance == 0.0 {
        return Ok((point, point));
    }
    let z = z_quantile(level)?;
    match scale {
        CiScale::Logit => {
            if !(point > 0.0 && point < 1.0) {
                return Err(Error::DegeneratePoint(point));
            }
            let se = variance.sqrt() / (point * (1.0 - point));
            let center = logit(point);
            Ok((expit(center - z * se), expit(center + z * se)))
        }
        CiScale::Identity => {
            let half = z * variance.sqrt();
            Ok((
                (point - half).clamp(0.0, 1.0),
                (point + half).clamp(0.0, 1.0),
            ))
        }
    }
}

/// Interval with the documented fallback: logit scale when the point is
/// interior, otherwise a clamped identity-scale interval. Returns the
/// interval and whether the fallback fired.
pub fn confidence_interval_with_fallback(
    point: f64,
    variance: f64,
    level: f64,
    scale: CiScale,
) -> Result<((f64, f64), bool)> {
    match confidence_interval(point, variance, level, scale) {
        Ok(ci) => Ok((ci, false)),
        Err(Error::DegeneratePoint(_)) => {
            let ci = confidence_interval(point, variance, level, CiScale::Identity)?;
            Ok((ci, true))
        }
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::PopulationMargins;
    use crate::glmm::{fit_model, Family, ModelSpec};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn fixture(
        counts: Vec<u64>,
        positives: Vec<u64>,
        margins: Vec<u64>,
    ) -> (StratumSummary, PopulationMargins) {
        let h = counts.len();
        (
            StratumSummary::from_cells(h, 1, counts, positives).unwrap(),
            PopulationMargins::from_cells(h, 1, margins).unwrap(),
        )
    }

    #[test]
    fn degenerate_generator_reproduces_fitted_means() {
        // homogeneous data: sigma^2 sits at the floor, so the generated
        // probabilities coincide with the fitted means
        let (s, m) = fixture(vec![500; 4], vec![150; 4], vec![5000; 4]);
        let fit = fit_model(&ModelSpec::new(Family::Xre), &s, &FitOptions::default()).unwrap();
        let mut rng = stream_rng(1, domain::BOOTSTRAP, 0);
        let pop = bootstrap_population(&fit, &m, &mut rng).unwrap();
        for (p, mu) in pop.probs.iter().zip(fit.mu_cells()) {
            assert_relative_eq!(p, mu, epsilon = 1e-4);
        }
    }

    #[test]
    fn population_mean_support_with_unit_strata() {
        let (s, m) = fixture(vec![1, 1, 1], vec![1, 0, 1], vec![1, 1, 1]);
        let fit = fit_model(&ModelSpec::new(Family::Xre), &s, &FitOptions::default()).unwrap();
        for b in 0..50 {
            let mut rng = stream_rng(2, domain::BOOTSTRAP, b);
            let pop = bootstrap_population(&fit, &m, &mut rng).unwrap();
            let scaled = pop.means[0] * 3.0;
            assert_relative_eq!(scaled, scaled.round(), epsilon = 1e-12);
        }
    }

    #[test]
    fn bootstrap_mean_matches_quadrature_oracle() {
        // XRE with non-trivial sigma: E[ytilde] = sum_h P_h E[expit(beta + sigma e)]
        let (s, m) = fixture(
            vec![400, 400, 400, 400],
            vec![60, 140, 90, 190],
            vec![1000, 1000, 1000, 1000],
        );
        let fit = fit_model(&ModelSpec::new(Family::Xre), &s, &FitOptions::default()).unwrap();
        assert!(fit.theta[0] > 1e-4, "want a non-degenerate variance");

        let reps = 10_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for b in 0..reps {
            let mut rng = stream_rng(3, domain::BOOTSTRAP, b);
            let pop = bootstrap_population(&fit, &m, &mut rng).unwrap();
            sum += pop.means[0];
            sumsq += pop.means[0] * pop.means[0];
        }
        let mc_mean = sum / reps as f64;
        let mc_var = sumsq / reps as f64 - mc_mean * mc_mean;
        let mc_se = (mc_var / reps as f64).sqrt();

        // trapezoid quadrature over the normal perturbation
        let sigma = fit.theta[0].sqrt();
        let beta = fit.beta[0];
        let grid = 4001;
        let mut oracle = 0.0;
        for h in 0..4 {
            let share = 0.25;
            let mut integral = 0.0;
            for i in 0..grid {
                let e = -8.0 + 16.0 * i as f64 / (grid - 1) as f64;
                let weight = if i == 0 || i == grid - 1 { 0.5 } else { 1.0 };
                let density = (-0.5 * e * e).exp() / (2.0 * std::f64::consts::PI).sqrt();
                integral += weight * expit(beta + sigma * e) * density;
            }
            integral *= 16.0 / (grid - 1) as f64;
            oracle += share * integral;
            let _ = h;
        }
        assert!(
            (mc_mean - oracle).abs() < 3.0 * mc_se,
            "mc {mc_mean} vs oracle {oracle} (3 se = {})",
            3.0 * mc_se
        );
    }

    #[test]
    fn bootstrap_variance_nearly_zero_for_degenerate_generator() {
        // huge strata, homogeneous outcome: binomial noise vanishes
        let (s, m) = fixture(
            vec![200_000; 3],
            vec![60_000; 3],
            vec![200_000; 3], // census: no prediction gap either
        );
        let fit = fit_model(&ModelSpec::new(Family::Xre), &s, &FitOptions::default()).unwrap();
        let cfg = BootstrapConfig {
            replicates: 20,
            seed: 11,
        };
        let out = bootstrap_variance(&fit, &s, &m, &cfg).unwrap();
        assert_eq!(out.used, 20);
        assert!(out.variance[0] < 1e-8, "variance {}", out.variance[0]);
    }

    #[test]
    fn bootstrap_variance_formula_identity() {
        // (1/B) sum d^2 over synthetic deviations, checked through the
        // public averaging by reconstruction
        let devs = [0.02, -0.01, 0.005, 0.0];
        let manual: f64 = devs.iter().map(|d| d * d).sum::<f64>() / devs.len() as f64;
        // the formula is exercised internally; reconstruct it here to
        // freeze the definition
        assert_relative_eq!(manual, (0.0004 + 0.0001 + 0.000025) / 4.0, epsilon = 1e-15);
    }

    #[test]
    fn bootstrap_se_tracks_analytical_se_on_flat_population() {
        // stratified draw from a flat population at realistic sizes
        let margins_row = vec![7500u64, 8000, 9000, 9000, 8000, 7500];
        let n_row = vec![60u64, 180, 420, 420, 180, 60];
        let mut rng = stream_rng(31, domain::SAMPLE, 0);
        let mut counts = Vec::new();
        let mut pos = Vec::new();
        for (i, &n) in n_row.iter().enumerate() {
            let k =
                crate::dist::hypergeometric_draw(&mut rng, margins_row[i], margins_row[i] / 2, n);
            counts.push(n);
            pos.push(k);
        }
        let s = StratumSummary::from_cells(6, 1, counts, pos).unwrap();
        let m = PopulationMargins::from_cells(6, 1, margins_row).unwrap();
        let fit = fit_model(&ModelSpec::new(Family::Xre), &s, &FitOptions::default()).unwrap();

        let analytical = crate::smooth::ws_variance_analytical(&fit, &s, &m)
            .unwrap()
            .sqrt();
        let cfg = BootstrapConfig {
            replicates: 250,
            seed: 17,
        };
        let bootstrap = bootstrap_variance(&fit, &s, &m, &cfg).unwrap().variance[0].sqrt();
        assert!(
            (analytical - bootstrap).abs() <= 0.25 * analytical.max(bootstrap),
            "analytical {analytical} vs bootstrap {bootstrap}"
        );
    }

    #[test]
    fn bootstrap_is_deterministic_across_runs() {
        let (s, m) = fixture(vec![80, 120, 60], vec![20, 50, 25], vec![800, 900, 700]);
        let fit = fit_model(&ModelSpec::new(Family::Xre), &s, &FitOptions::default()).unwrap();
        let cfg = BootstrapConfig {
            replicates: 40,
            seed: 123,
        };
        let a = bootstrap_variance(&fit, &s, &m, &cfg).unwrap();
        let b = bootstrap_variance(&fit, &s, &m, &cfg).unwrap();
        assert_eq!(a.variance, b.variance);
    }

    #[test]
    fn jackknife_group_sizes() {
        let mut rng = stream_rng(5, domain::JACKKNIFE, 0);
        // n = 6, G = 3: two blocks of 3, three subgroups of 2
        let keys: Vec<(usize, usize)> = (0..6).map(|i| (1, i + 1)).collect();
        let groups = jackknife_groups(&keys, 3, &mut rng);
        assert_eq!(groups.len(), 3);
        for g in &groups {
            assert_eq!(g.len(), 2);
        }

        // n = 5, G = 3: remainder block of 2; sizes {2, 2, 1}
        let keys: Vec<(usize, usize)> = (0..5).map(|i| (1, i + 1)).collect();
        let groups = jackknife_groups(&keys, 3, &mut rng);
        let mut sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![1, 2, 2]);
    }

    proptest! {
        #[test]
        fn jackknife_groups_partition_the_sample(
            n in 2usize..200,
            g in 2usize..20,
            seed in 0u64..1000,
        ) {
            let mut rng = stream_rng(seed, domain::JACKKNIFE, 0);
            let keys: Vec<(usize, usize)> =
                (0..n).map(|i| (1 + i % 3, 1 + (i * 7) % 5)).collect();
            let groups = jackknife_groups(&keys, g, &mut rng);
            let mut seen = vec![false; n];
            for group in &groups {
                for &i in group {
                    prop_assert!(!seen[i], "unit {} assigned twice", i);
                    seen[i] = true;
                }
            }
            prop_assert!(seen.iter().all(|&s| s));
            let max = groups.iter().map(Vec::len).max().unwrap();
            let min = groups.iter().map(Vec::len).min().unwrap();
            prop_assert!(max - min <= 1);
        }
    }

    #[test]
    fn jackknife_variance_zero_for_constant_estimator() {
        let groups: Vec<Vec<usize>> = (0..10).map(|i| vec![i]).collect();
        let var = jackknife_variance(&groups, |_| Ok(vec![0.42])).unwrap();
        assert!(var[0].abs() < 1e-30, "variance {}", var[0]);
    }

    #[test]
    fn jackknife_variance_two_group_closed_form() {
        let groups = vec![vec![0], vec![1]];
        let var = jackknife_variance(&groups, |removed| {
            Ok(vec![if removed[0] == 0 { 0.3 } else { 0.7 }])
        })
        .unwrap();
        // (G-1)/G * sum (e - mean)^2 = (1/2) * 2 * 0.2^2 = (a-b)^2 / 4
        assert_relative_eq!(var[0], (0.3f64 - 0.7).powi(2) / 4.0, epsilon = 1e-15);
    }

    #[test]
    fn jackknife_variance_propagates_failures() {
        let groups = vec![vec![0], vec![1], vec![2]];
        let out = jackknife_variance(&groups, |removed| {
            if removed[0] == 1 {
                Err(Error::EmptyStratum(1))
            } else {
                Ok(vec![0.5])
            }
        });
        assert!(out.is_err());
    }

    #[test]
    fn greg_jackknife_runs_and_is_deterministic() {
        let (s, m) = fixture(
            vec![30, 80, 40, 100],
            vec![10, 30, 18, 45],
            vec![900, 400, 600, 500],
        );
        let fit = fit_model(&ModelSpec::new(Family::Xre), &s, &FitOptions::default()).unwrap();
        let cfg = JackknifeConfig {
            groups: 25,
            seed: 7,
        };
        let a = greg_jackknife_variance(&fit, &s, &m, 3.0, &cfg).unwrap();
        let b = greg_jackknife_variance(&fit, &s, &m, 3.0, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a[0] > 0.0);
    }

    #[test]
    fn ci_zero_variance_collapses() {
        assert_eq!(
            confidence_interval(0.3, 0.0, 0.95, CiScale::Logit).unwrap(),
            (0.3, 0.3)
        );
    }

    #[test]
    fn ci_hand_oracle() {
        // p = 0.5, se = 0.05: logit half-width 1.96 * 0.05 / 0.25
        let (lo, hi) = confidence_interval(0.5, 0.0025, 0.95, CiScale::Logit).unwrap();
        assert_relative_eq!(lo, expit(-1.959963984540054 * 0.2), epsilon = 1e-9);
        assert_relative_eq!(hi, expit(1.959963984540054 * 0.2), epsilon = 1e-9);
        assert_relative_eq!(lo, 0.4032, epsilon = 5e-5);
        assert_relative_eq!(hi, 0.5968, epsilon = 5e-5);
    }

    #[test]
    fn ci_symmetric_about_half() {
        let (lo, hi) = confidence_interval(0.5, 0.001, 0.9, CiScale::Logit).unwrap();
        assert_relative_eq!(lo + hi, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn ci_degenerate_point_falls_back() {
        assert!(matches!(
            confidence_interval(1.0, 0.01, 0.95, CiScale::Logit),
            Err(Error::DegeneratePoint(_))
        ));
        let ((lo, hi), fell_back) =
            confidence_interval_with_fallback(1.0, 0.01, 0.95, CiScale::Logit).unwrap();
        assert!(fell_back);
        assert!(lo < 1.0 && hi == 1.0);
    }
}
