//! Monte Carlo harness: synthetic populations, repeated-sampling
//! scenarios and evaluation metrics (bias, variance, MSE, coverage,
//! interval length) for every estimator.

use rand::Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{PopulationMargins, StratumSummary};
use crate::design::{design_point, DesignKind};
use crate::dist::hypergeometric_draw;
use crate::error::Error;
use crate::glmm::{fit_model, Family, FitOptions, FittedGlmm, ModelSpec};
use crate::resample::{
    bootstrap_variance, confidence_interval_with_fallback, greg_jackknife_variance,
    BootstrapConfig, CiScale, JackknifeConfig,
};
use crate::rng::{derive_seed, domain, stream_rng};
use crate::smooth::ws_variance_analytical;
use crate::trend::{
    fit_trend_model, trend_estimates, trend_greg_estimates, trend_pseudo_inclusion,
    trend_variance_analytical,
};
use crate::{expit, Result};

pub const STRATA: usize = 18;
pub const TREND_TIME_POINTS: usize = 30;

/// Synthetic population families; the F models add a time trend over 30
/// equally spaced points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PopulationModel {
    #[serde(rename = "NULL")]
    Null,
    #[serde(rename = "XRE")]
    Xre,
    #[serde(rename = "LIN0")]
    Lin0,
    #[serde(rename = "LIN1")]
    Lin1,
    #[serde(rename = "QUAD0")]
    Quad0,
    #[serde(rename = "QUAD1")]
    Quad1,
    #[serde(rename = "EXP0")]
    Exp0,
    #[serde(rename = "EXP1")]
    Exp1,
    F1,
    F2,
    F3,
    F4,
}

impl PopulationModel {
    pub const ALL: [PopulationModel; 12] = [
        PopulationModel::Null,
        PopulationModel::Xre,
        PopulationModel::Lin0,
        PopulationModel::Lin1,
        PopulationModel::Quad0,
        PopulationModel::Quad1,
        PopulationModel::Exp0,
        PopulationModel::Exp1,
        PopulationModel::F1,
        PopulationModel::F2,
        PopulationModel::F3,
        PopulationModel::F4,
    ];

    /// Stratum effect on the logit scale.
    pub fn delta_h(&self, h: usize) -> f64 {
        let h = h as f64;
        match self {
            PopulationModel::Null | PopulationModel::Xre => 0.0,
            PopulationModel::Lin0 | PopulationModel::Lin1 => -2.0 + 0.2 * h,
            PopulationModel::Quad0 | PopulationModel::Quad1 => 1.0 - 0.25 * h + 0.01 * h * h,
            PopulationModel::Exp0
            | PopulationModel::Exp1
            | PopulationModel::F1
            | PopulationModel::F2
            | PopulationModel::F3
            | PopulationModel::F4 => -1.0 + 2.0 * (-h / 9.0).exp(),
        }
    }

    /// Time effect on the logit scale (trend models only).
    pub fn delta_t(&self, t: usize) -> Option<f64> {
        let t = t as f64;
        let peak = -2.0 + 3.0 * (-(t - 15.0) * (t - 15.0) / 50.0).exp();
        match self {
            PopulationModel::F1 | PopulationModel::F2 => Some(peak),
            PopulationModel::F3 | PopulationModel::F4 => {
                Some(peak - (-(t - 15.0) * (t - 15.0)).exp())
            }
            _ => None,
        }
    }

    /// Variance of the stratum deviations.
    pub fn sigma2(&self) -> f64 {
        match self {
            PopulationModel::Xre
            | PopulationModel::Lin1
            | PopulationModel::Quad1
            | PopulationModel::Exp1
            | PopulationModel::F2
            | PopulationModel::F4 => 0.02,
            _ => 0.0,
        }
    }

    pub fn has_trend(&self) -> bool {
        matches!(
            self,
            PopulationModel::F1 | PopulationModel::F2 | PopulationModel::F3 | PopulationModel::F4
        )
    }

    pub fn time_points(&self) -> usize {
        if self.has_trend() {
            TREND_TIME_POINTS
        } else {
            1
        }
    }
}

/// Total population size of the two simulation regimes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PopulationSize {
    /// 6,000,000 individuals.
    N1,
    /// 150,000 individuals.
    N2,
}

/// Per-stratum population sizes.
pub fn stratum_sizes(size: PopulationSize) -> [u64; STRATA] {
    match size {
        PopulationSize::N1 => [
            300_000, 300_000, 320_000, 320_000, 340_000, 340_000, 360_000, 360_000, 360_000,
            360_000, 360_000, 360_000, 340_000, 340_000, 320_000, 320_000, 300_000, 300_000,
        ],
        PopulationSize::N2 => [
            7500, 7500, 8000, 8000, 8500, 8500, 9000, 9000, 9000, 9000, 9000, 9000, 8500, 8500,
            8000, 8000, 7500, 7500,
        ],
    }
}

/// Per-stratum sample sizes of the four built-in designs, keyed by the
/// total sample size.
pub fn sample_sizes(size: PopulationSize, total: u64) -> Result<[u64; STRATA]> {
    let row = match (size, total) {
        (PopulationSize::N1, 25_000) => [
            50, 150, 300, 750, 1250, 1500, 2000, 2750, 3750, 3750, 2750, 2000, 1500, 1000, 800,
            400, 200, 100,
        ],
        (PopulationSize::N1, 5_000) => [
            10, 30, 60, 150, 250, 300, 400, 550, 750, 750, 550, 400, 300, 200, 160, 80, 40, 20,
        ],
        (PopulationSize::N2, 2_500) => [
            5, 15, 30, 75, 125, 150, 200, 275, 375, 375, 275, 200, 150, 100, 80, 40, 20, 10,
        ],
        (PopulationSize::N2, 500) => [
            1, 3, 6, 15, 25, 30, 40, 55, 75, 75, 55, 40, 30, 20, 16, 8, 4, 2,
        ],
        _ => {
            return Err(Error::InvalidSpec(format!(
                "no built-in design with total sample size {total} for {size:?}"
            )))
        }
    };
    debug_assert_eq!(row.iter().sum::<u64>(), total);
    Ok(row)
}

/// One realized synthetic population.
#[derive(Debug, Clone)]
pub struct SyntheticPopulation {
    pub margins: PopulationMargins,
    /// Cell success probabilities of the generating model.
    pub probs: Vec<f64>,
    /// Realized positives per cell.
    pub positives: Vec<u64>,
    /// Realized population mean per time point: the unique truth used by
    /// bias and coverage.
    pub truth: Vec<f64>,
}

/// Generate a population: draw the stratum deviations once, then fill
/// each cell with a binomial count at `expit(delta_t + delta*_h)`.
pub fn gen_population(
    model: PopulationModel,
    size: PopulationSize,
    rng: &mut impl Rng,
) -> Result<SyntheticPopulation> {
    let sizes = stratum_sizes(size);
    let t_points = model.time_points();
    let margins = PopulationMargins::constant_over_time(sizes.to_vec(), t_points)?;

    let sigma = model.sigma2().sqrt();
    let delta_star: Vec<f64> = (1..=STRATA)
        .map(|h| {
            let noise: f64 = if sigma > 0.0 {
                let e: f64 = StandardNormal.sample(rng);
                sigma * e
            } else {
                0.0
            };
            model.delta_h(h) + noise
        })
        .collect();

    let cells = STRATA * t_points;
    let mut probs = Vec::with_capacity(cells);
    let mut positives = Vec::with_capacity(cells);
    for t in 1..=t_points {
        let dt = model.delta_t(t).unwrap_or(0.0);
        for h in 1..=STRATA {
            let p = expit(dt + delta_star[h - 1]);
            probs.push(p);
            let draw = Binomial::new(sizes[h - 1], p)
                .map_err(|e| Error::NumericalBreakdown(format!("binomial: {e}")))?
                .sample(rng);
            positives.push(draw);
        }
    }
    let truth = (1..=t_points)
        .map(|t| {
            let total: u64 = (1..=STRATA)
                .map(|h| positives[(t - 1) * STRATA + h - 1])
                .sum();
            total as f64 / margins.total_at(t) as f64
        })
        .collect();
    Ok(SyntheticPopulation {
        margins,
        probs,
        positives,
        truth,
    })
}

/// Stratified SRS without replacement: hypergeometric positives per cell
/// under fixed per-stratum sample sizes (constant over time).
pub fn draw_sample(
    population: &SyntheticPopulation,
    n_row: &[u64; STRATA],
    rng: &mut impl Rng,
) -> Result<StratumSummary> {
    let t_points = population.margins.time_points();
    let mut counts = Vec::with_capacity(STRATA * t_points);
    let mut positives = Vec::with_capacity(STRATA * t_points);
    for t in 1..=t_points {
        for h in 1..=STRATA {
            let cap = population.margins.count(h, t);
            let n = n_row[h - 1];
            if n > cap {
                return Err(Error::OversampledStratum { h, n, cap });
            }
            let k = population.positives[(t - 1) * STRATA + h - 1];
            let draw = hypergeometric_draw(rng, cap, k, n);
            counts.push(n);
            positives.push(draw);
        }
    }
    StratumSummary::from_cells(STRATA, t_points, counts, positives)
}

/// Estimator roster of the comparison study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash)]
pub enum EstimatorId {
    #[serde(rename = "psm")]
    Psm,
    #[serde(rename = "unw")]
    Unw,
    #[serde(rename = "trim")]
    Trim,
    #[serde(rename = "xre")]
    Xre,
    #[serde(rename = "xre-greg")]
    XreGreg,
    #[serde(rename = "lin")]
    Lin,
    #[serde(rename = "lin-greg")]
    LinGreg,
    #[serde(rename = "npar")]
    Npar,
    #[serde(rename = "npar-greg")]
    NparGreg,
}

impl EstimatorId {
    pub const ALL: [EstimatorId; 9] = [
        EstimatorId::Psm,
        EstimatorId::Unw,
        EstimatorId::Trim,
        EstimatorId::Xre,
        EstimatorId::XreGreg,
        EstimatorId::Lin,
        EstimatorId::LinGreg,
        EstimatorId::Npar,
        EstimatorId::NparGreg,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            EstimatorId::Psm => "psm",
            EstimatorId::Unw => "unw",
            EstimatorId::Trim => "trim",
            EstimatorId::Xre => "xre",
            EstimatorId::XreGreg => "xre-greg",
            EstimatorId::Lin => "lin",
            EstimatorId::LinGreg => "lin-greg",
            EstimatorId::Npar => "npar",
            EstimatorId::NparGreg => "npar-greg",
        }
    }

    pub fn family(&self) -> Option<Family> {
        match self {
            EstimatorId::Xre | EstimatorId::XreGreg => Some(Family::Xre),
            EstimatorId::Lin | EstimatorId::LinGreg => Some(Family::Lin),
            EstimatorId::Npar | EstimatorId::NparGreg => Some(Family::Npar),
            _ => None,
        }
    }

    pub fn is_greg(&self) -> bool {
        matches!(
            self,
            EstimatorId::XreGreg | EstimatorId::LinGreg | EstimatorId::NparGreg
        )
    }
}

/// Variance route for the weight-smoothing (non-GREG) estimators inside
/// a scenario run; GREG estimators always use the jackknife and design
/// estimators their closed forms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WsVariance {
    #[default]
    Analytical,
    Bootstrap,
}

/// A simulation scenario: one population model, size regime and sampling
/// design, replicated over `populations x samples_per_population`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub model: PopulationModel,
    pub population_size: PopulationSize,
    /// Total sample size; must match a built-in design row.
    pub sample_size: u64,
    pub populations: usize,
    pub samples_per_population: usize,
    pub estimators: Vec<EstimatorId>,
    #[serde(default = "default_w0")]
    pub w0: f64,
    #[serde(rename = "B", default = "default_b")]
    pub bootstrap_replicates: usize,
    #[serde(rename = "G", default = "default_g")]
    pub jackknife_groups: usize,
    pub seed: u64,
    /// Variance route for xre/lin/npar confidence intervals.
    #[serde(default)]
    pub ws_variance: WsVariance,
    #[serde(default = "default_level")]
    pub level: f64,
}

fn default_w0() -> f64 {
    3.0
}
fn default_b() -> usize {
    250
}
fn default_g() -> usize {
    250
}
fn default_level() -> f64 {
    0.95
}

/// Per-estimator (per-time) aggregated metrics.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsRow {
    pub estimator: &'static str,
    /// Time point; 0 for overall-prevalence scenarios.
    pub t: usize,
    pub replicates: usize,
    pub failures: usize,
    pub bias: f64,
    pub variance: f64,
    pub mse: f64,
    pub coverage: f64,
    pub avg_ci_length: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRow>,
}

impl MetricsTable {
    /// Schema-stable CSV rendering (header documented in the README).
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "estimator,t,replicates,failures,bias,variance,mse,coverage,avg_ci_length\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{:e},{:e},{:e},{:e},{:e}\n",
                r.estimator,
                r.t,
                r.replicates,
                r.failures,
                r.bias,
                r.variance,
                r.mse,
                r.coverage,
                r.avg_ci_length
            ));
        }
        out
    }

    pub fn row(&self, estimator: EstimatorId, t: usize) -> Option<&MetricsRow> {
        self.rows
            .iter()
            .find(|r| r.estimator == estimator.name() && r.t == t)
    }
}

/// Bias/variance/MSE decomposition per population, averaged across
/// populations: `MSE_p = Var_p + Bias_p^2` with the `1/S` variance
/// divisor.
pub fn mse_decompose(groups: &[Vec<f64>], truths: &[f64]) -> Result<(f64, f64, f64)> {
    if groups.len() != truths.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} estimate groups vs {} truths",
            groups.len(),
            truths.len()
        )));
    }
    let mut bias_sum = 0.0;
    let mut var_sum = 0.0;
    let mut mse_sum = 0.0;
    for (estimates, &truth) in groups.iter().zip(truths) {
        if estimates.len() < 2 {
            return Err(Error::InsufficientReplicates(format!(
                "population group has {} estimates; need at least 2",
                estimates.len()
            )));
        }
        let s = estimates.len() as f64;
        let mean = estimates.iter().sum::<f64>() / s;
        let var = estimates
            .iter()
            .map(|e| (e - mean) * (e - mean))
            .sum::<f64>()
            / s;
        let bias = mean - truth;
        bias_sum += bias;
        var_sum += var;
        mse_sum += var + bias * bias;
    }
    let p = groups.len() as f64;
    Ok((bias_sum / p, var_sum / p, mse_sum / p))
}

/// One estimator's output on one replicate.
#[derive(Debug, Clone)]
struct ReplicateOutcome {
    /// Point estimate and interval per time point.
    points: Vec<f64>,
    cis: Vec<(f64, f64)>,
}

type EstimatorResults = Vec<std::result::Result<ReplicateOutcome, String>>;

/// Run a full scenario and aggregate metrics.
///
/// Replicates are independent seeded streams indexed by
/// `(population, sample)`; the aggregation is a deterministic ordered
/// reduction, so the resulting table is identical at any parallelism
/// level.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<MetricsTable> {
    validate_config(cfg)?;
    let n_row = sample_sizes(cfg.population_size, cfg.sample_size)?;
    let populations: Vec<SyntheticPopulation> = (0..cfg.populations)
        .into_par_iter()
        .map(|p| {
            let mut rng = stream_rng(cfg.seed, domain::POPULATION, p as u64);
            gen_population(cfg.model, cfg.population_size, &mut rng)
        })
        .collect::<Result<_>>()?;

    let total_reps = cfg.populations * cfg.samples_per_population;
    let outcomes: Vec<Vec<std::result::Result<ReplicateOutcome, String>>> = (0..total_reps)
        .into_par_iter()
        .map(|r| {
            let p = r / cfg.samples_per_population;
            let mut rng = stream_rng(cfg.seed, domain::SAMPLE, r as u64);
            run_replicate(cfg, &populations[p], &n_row, r as u64, &mut rng)
        })
        .collect();

    // regroup: estimator -> replicate outcomes
    let per_estimator: Vec<EstimatorResults> = (0..cfg.estimators.len())
        .map(|e| outcomes.iter().map(|reps| reps[e].clone()).collect())
        .collect();

    let t_points = cfg.model.time_points();
    let mut rows = Vec::new();
    for (e, id) in cfg.estimators.iter().enumerate() {
        let results = &per_estimator[e];
        for t in 0..t_points {
            let mut groups: Vec<Vec<f64>> = Vec::new();
            let mut truths: Vec<f64> = Vec::new();
            let mut covered = 0usize;
            let mut length_sum = 0.0;
            let mut used = 0usize;
            for p in 0..cfg.populations {
                let truth = populations[p].truth[t];
                let mut group = Vec::new();
                for s in 0..cfg.samples_per_population {
                    let r = p * cfg.samples_per_population + s;
                    if let Ok(outcome) = &results[r] {
                        group.push(outcome.points[t]);
                        let (lo, hi) = outcome.cis[t];
                        if lo <= truth && truth <= hi {
                            covered += 1;
                        }
                        length_sum += hi - lo;
                        used += 1;
                    }
                }
                if group.len() >= 2 {
                    groups.push(group);
                    truths.push(truth);
                }
            }
            let (bias, variance, mse) = mse_decompose(&groups, &truths)?;
            rows.push(MetricsRow {
                estimator: id.name(),
                t: if t_points == 1 { 0 } else { t + 1 },
                replicates: used,
                failures: total_reps - used,
                bias,
                variance,
                mse,
                coverage: covered as f64 / used as f64,
                avg_ci_length: length_sum / used as f64,
            });
        }
    }
    Ok(MetricsTable { rows })
}

fn validate_config(cfg: &ScenarioConfig) -> Result<()> {
    if cfg.populations == 0 || cfg.samples_per_population < 2 {
        return Err(Error::InvalidSpec(
            "need populations >= 1 and samples_per_population >= 2".into(),
        ));
    }
    if cfg.estimators.is_empty() {
        return Err(Error::InvalidSpec("estimator list is empty".into()));
    }
    if cfg.w0 <= 0.0 {
        return Err(Error::InvalidSpec("w0 must be positive".into()));
    }
    Ok(())
}

fn model_spec_for(cfg: &ScenarioConfig, family: Family) -> ModelSpec {
    let mut spec = ModelSpec::new(family);
    spec.w0 = cfg.w0;
    if cfg.model.has_trend() {
        spec.trend = true;
        // knots at all time points, as in the trend comparison study
        spec.trend_knots = Some(cfg.model.time_points());
    }
    spec
}

fn run_replicate(
    cfg: &ScenarioConfig,
    population: &SyntheticPopulation,
    n_row: &[u64; STRATA],
    replicate: u64,
    rng: &mut impl Rng,
) -> Vec<std::result::Result<ReplicateOutcome, String>> {
    let summary = match draw_sample(population, n_row, rng) {
        Ok(s) => s,
        Err(e) => return vec![Err(e.to_string()); cfg.estimators.len()],
    };
    let margins = &population.margins;
    let t_points = summary.time_points();

    // model fits shared between an estimator and its GREG adjustment
    let mut fits: [Option<std::result::Result<FittedGlmm, String>>; 3] = [None, None, None];
    let mut outcomes = Vec::with_capacity(cfg.estimators.len());
    for (e, id) in cfg.estimators.iter().enumerate() {
        let resample_seed = derive_seed(cfg.seed, replicate, e as u64);
        let estimate = estimate_one(
            cfg,
            *id,
            &summary,
            margins,
            t_points,
            &mut fits,
            resample_seed,
        );
        outcomes.push(estimate.map_err(|err| err.to_string()));
    }
    outcomes
}

fn cached_fit(
    cfg: &ScenarioConfig,
    family: Family,
    summary: &StratumSummary,
    fits: &mut [Option<std::result::Result<FittedGlmm, String>>; 3],
) -> std::result::Result<FittedGlmm, String> {
    let slot = match family {
        Family::Xre => 0,
        Family::Lin => 1,
        Family::Npar => 2,
    };
    if fits[slot].is_none() {
        let spec = model_spec_for(cfg, family);
        let result = if cfg.model.has_trend() {
            fit_trend_model(summary, &spec, &FitOptions::default()).map(|t| t.fit)
        } else {
            fit_model(&spec, summary, &FitOptions::default())
        };
        fits[slot] = Some(result.map_err(|e| e.to_string()));
    }
    fits[slot].as_ref().unwrap().clone()
}

fn estimate_one(
    cfg: &ScenarioConfig,
    id: EstimatorId,
    summary: &StratumSummary,
    margins: &PopulationMargins,
    t_points: usize,
    fits: &mut [Option<std::result::Result<FittedGlmm, String>>; 3],
    resample_seed: u64,
) -> Result<ReplicateOutcome> {
    let (points, variances): (Vec<f64>, Vec<f64>) = match id {
        EstimatorId::Psm | EstimatorId::Unw | EstimatorId::Trim => {
            let kind = match id {
                EstimatorId::Psm => DesignKind::Psm,
                EstimatorId::Unw => DesignKind::Unw,
                _ => DesignKind::Trim,
            };
            let mut pts = Vec::with_capacity(t_points);
            let mut vars = Vec::with_capacity(t_points);
            for t in 1..=t_points {
                let (pt, var) = design_point(kind, &summary.at(t), &margins.at(t), cfg.w0)?;
                pts.push(pt);
                vars.push(var);
            }
            (pts, vars)
        }
        _ => {
            let family = id.family().expect("model-based estimator");
            let fit = cached_fit(cfg, family, summary, fits).map_err(Error::InvalidSpec)?;
            if id.is_greg() {
                let pi = trend_pseudo_inclusion(summary, margins, cfg.w0)?;
                let pts = trend_greg_estimates(fit.mu_cells(), summary, margins, &pi)?;
                let jk = JackknifeConfig {
                    groups: cfg.jackknife_groups,
                    seed: resample_seed,
                };
                let vars = greg_jackknife_variance(&fit, summary, margins, cfg.w0, &jk)?;
                (pts, vars)
            } else {
                let pts = trend_estimates(fit.mu_cells(), summary, margins)?;
                let vars = match cfg.ws_variance {
                    WsVariance::Analytical => {
                        if cfg.model.has_trend() {
                            trend_variance_analytical(
                                &crate::trend::TrendFit { fit: fit.clone() },
                                summary,
                                margins,
                            )?
                        } else {
                            vec![ws_variance_analytical(&fit, summary, margins)?]
                        }
                    }
                    WsVariance::Bootstrap => {
                        let bs = BootstrapConfig {
                            replicates: cfg.bootstrap_replicates,
                            seed: resample_seed,
                        };
                        bootstrap_variance(&fit, summary, margins, &bs)?.variance
                    }
                };
                (pts, vars)
            }
        }
    };
    let mut cis = Vec::with_capacity(t_points);
    for t in 0..t_points {
        let (ci, _) =
            confidence_interval_with_fallback(points[t], variances[t], cfg.level, CiScale::Logit)?;
        cis.push(ci);
    }
    Ok(ReplicateOutcome { points, cis })
}
