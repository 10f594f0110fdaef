//! Weight-smoothing model fitting.
//!
//! The stratum means are shrunk through a binomial GLMM
//! `logit(mu) = X beta + Z b`, `b ~ N(0, G)`, fitted by pseudo-restricted
//! maximum likelihood: the outer loop linearizes the binomial likelihood
//! to working pseudo-data, the inner step estimates variance components
//! of the resulting linear mixed model by REML, and the loop re-expands
//! around the updated predictor until the fit is a fixed point.
//!
//! Stratum-level binomial aggregation is used throughout; it carries the
//! same likelihood as unit-level Bernoulli records at `O(H)` cost.

mod reml;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::ops::Range;

use reml::WorkingLmm;
pub use reml::VAR_FLOOR;

use crate::basis::{self, BasisMatrices};
use crate::data::StratumSummary;
use crate::error::Error;
use crate::{expit, logit, Result};

/// Structure assumed for the stratum means.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// Exchangeable random effects around a common intercept.
    Xre,
    /// Random effects around a line in the stratum index.
    Lin,
    /// Penalized spline over the stratum index.
    Npar,
}

/// Spline family for NPAR smooths (stratum and time).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisKind {
    ThinPlate,
    TruncatedLinear,
}

/// Full specification of a weight-smoothing model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    #[serde(default = "default_basis")]
    pub basis: BasisKind,
    /// Stratum-spline knot count; defaults to one knot per stratum.
    #[serde(default)]
    pub knots: Option<usize>,
    /// Fit the additive time-trend extension.
    #[serde(default)]
    pub trend: bool,
    /// Time-spline knot count; defaults to `min(20, T)`.
    #[serde(default)]
    pub trend_knots: Option<usize>,
    /// Weight-trimming cutoff used when the fit feeds a GREG adjustment.
    #[serde(default = "default_w0")]
    pub w0: f64,
}

fn default_basis() -> BasisKind {
    BasisKind::ThinPlate
}

fn default_w0() -> f64 {
    3.0
}

impl ModelSpec {
    pub fn new(family: Family) -> Self {
        ModelSpec {
            family,
            basis: default_basis(),
            knots: None,
            trend: false,
            trend_knots: None,
            w0: default_w0(),
        }
    }

    pub fn with_trend(mut self) -> Self {
        self.trend = true;
        self
    }
}

/// What a random-effect block models; drives the bootstrap's
/// regenerate-vs-hold rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    /// i.i.d. stratum deviations (XRE / LIN).
    StratumIid,
    /// Penalized stratum spline (NPAR).
    StratumSpline,
    /// Penalized time spline of the trend model.
    TimeSpline,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomBlock {
    pub kind: BlockKind,
    /// Column range within `z`.
    pub cols: Range<usize>,
}

/// Fixed and random design over the `H x T` cell grid (time-major rows).
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrices {
    pub x: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub blocks: Vec<RandomBlock>,
    pub h: usize,
    pub t: usize,
}

impl DesignMatrices {
    pub fn cells(&self) -> usize {
        self.h * self.t
    }

    fn combined(&self) -> DMatrix<f64> {
        let m = self.cells();
        let p = self.x.ncols();
        let q = self.z.ncols();
        let mut c = DMatrix::zeros(m, p + q);
        c.view_mut((0, 0), (m, p)).copy_from(&self.x);
        c.view_mut((0, p), (m, q)).copy_from(&self.z);
        c
    }

    fn block_ranges(&self) -> Vec<Range<usize>> {
        self.blocks.iter().map(|b| b.cols.clone()).collect()
    }
}

/// Build design matrices for a model over `H` strata (and `T` time points).
///
/// The stratum covariate is the index itself, `x_h = h`. With the trend
/// flag the fixed part carries a single shared intercept, the stratum
/// polynomial for LIN/NPAR and a centered time slope; the time spline's
/// penalized part enters as its own random block.
pub fn build_design(spec: &ModelSpec, h: usize, t: Option<usize>) -> Result<DesignMatrices> {
    if h < 2 {
        return Err(Error::InvalidSpec("at least two strata required".into()));
    }
    let t = t.unwrap_or(1);
    if spec.trend && t < 2 {
        return Err(Error::InvalidSpec("trend model requires T >= 2".into()));
    }
    if !spec.trend && t > 1 {
        return Err(Error::InvalidSpec(
            "T > 1 supplied to a model without the trend flag".into(),
        ));
    }

    let xh: Vec<f64> = (1..=h).map(|i| i as f64).collect();
    let (stratum_fixed, stratum_random, stratum_kind) = match spec.family {
        Family::Xre => (
            DMatrix::from_element(h, 1, 1.0),
            DMatrix::identity(h, h),
            BlockKind::StratumIid,
        ),
        Family::Lin => (
            DMatrix::from_fn(h, 2, |i, j| if j == 0 { 1.0 } else { xh[i] }),
            DMatrix::identity(h, h),
            BlockKind::StratumIid,
        ),
        Family::Npar => {
            let count = spec.knots.unwrap_or(h);
            let knots = basis::place_knots(&xh, count)?;
            let BasisMatrices { xpoly, zspline, .. } = match spec.basis {
                BasisKind::ThinPlate => basis::thin_plate_basis(&xh, &knots)?,
                BasisKind::TruncatedLinear => basis::truncated_linear_basis(&xh, &knots)?,
            };
            (xpoly, zspline, BlockKind::StratumSpline)
        }
    };

    if !spec.trend {
        let q = stratum_random.ncols();
        return Ok(DesignMatrices {
            x: stratum_fixed,
            z: stratum_random,
            blocks: vec![RandomBlock {
                kind: stratum_kind,
                cols: 0..q,
            }],
            h,
            t: 1,
        });
    }

    let tt: Vec<f64> = (1..=t).map(|i| i as f64).collect();
    let t_mean = (t + 1) as f64 / 2.0;
    // with two time points the centered slope already interpolates any
    // trend; a spline block would sit inside the fixed span and leave
    // its variance unidentified
    let time_random = if t <= 2 {
        DMatrix::zeros(t, 0)
    } else {
        let count = spec.trend_knots.unwrap_or_else(|| t.min(20));
        let tknots = basis::place_knots(&tt, count)?;
        match spec.basis {
            BasisKind::ThinPlate => basis::thin_plate_basis(&tt, &tknots)?.zspline,
            BasisKind::TruncatedLinear => basis::truncated_linear_basis(&tt, &tknots)?.zspline,
        }
    };

    let m = h * t;
    let p = stratum_fixed.ncols() + 1;
    let qh = stratum_random.ncols();
    let qt = time_random.ncols();
    let mut x = DMatrix::zeros(m, p);
    let mut z = DMatrix::zeros(m, qh + qt);
    for ti in 0..t {
        for hi in 0..h {
            let row = ti * h + hi;
            for j in 0..stratum_fixed.ncols() {
                x[(row, j)] = stratum_fixed[(hi, j)];
            }
            x[(row, p - 1)] = tt[ti] - t_mean;
            for j in 0..qh {
                z[(row, j)] = stratum_random[(hi, j)];
            }
            for j in 0..qt {
                z[(row, qh + j)] = time_random[(ti, j)];
            }
        }
    }
    let mut blocks = vec![RandomBlock {
        kind: stratum_kind,
        cols: 0..qh,
    }];
    if qt > 0 {
        blocks.push(RandomBlock {
            kind: BlockKind::TimeSpline,
            cols: qh..qh + qt,
        });
    }
    Ok(DesignMatrices { x, z, blocks, h, t })
}

/// How each variance component is treated during fitting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VarianceMode {
    Estimate,
    Fixed(f64),
}

/// Convergence controls and warm-start state for [`fit_pql`].
#[derive(Debug, Clone)]
pub struct FitOptions {
    /// Outer-loop relative-change tolerance on `(beta, theta)`.
    pub tol: f64,
    pub max_iter: usize,
    /// Starting cell means; defaults to shrunk empirical means.
    pub start_mu: Option<Vec<f64>>,
    /// Starting variance components (one per random block).
    pub start_theta: Option<Vec<f64>>,
    /// Per-block overrides; `Fixed(0)` removes the block outright.
    pub variance_modes: Option<Vec<VarianceMode>>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            tol: 1e-8,
            max_iter: 100,
            start_mu: None,
            start_theta: None,
            variance_modes: None,
        }
    }
}

impl FitOptions {
    /// Warm-start options derived from a converged fit on similar data.
    pub fn warm_from(fit: &FittedGlmm) -> Self {
        FitOptions {
            start_mu: Some(fit.mu.iter().copied().collect()),
            start_theta: Some(fit.theta.clone()),
            ..FitOptions::default()
        }
    }
}

/// A converged (or final-iterate) weight-smoothing model fit.
///
/// Holds everything the estimator layer needs: fitted cell means, the
/// design, working weights at convergence (the plug-in `Sigma_p^{-1}`
/// diagonal) and variance components (the plug-in `G`).
#[derive(Debug, Clone)]
pub struct FittedGlmm {
    pub design: DesignMatrices,
    pub beta: DVector<f64>,
    pub b: DVector<f64>,
    /// Variance component per random block of `design.blocks`.
    pub theta: Vec<f64>,
    pub eta: DVector<f64>,
    pub mu: DVector<f64>,
    /// Working precisions `n_h mu (1 - mu)` at convergence (0 for empty cells).
    pub work_weights: DVector<f64>,
    /// Sampled units per cell.
    pub counts: Vec<u64>,
    pub converged: bool,
    pub iterations: usize,
}

impl FittedGlmm {
    /// Fitted stratum means (time-major cells).
    pub fn mu_cells(&self) -> &[f64] {
        self.mu.as_slice()
    }

    /// Fitted mean of one cell.
    pub fn mu_at(&self, h: usize, t: usize) -> f64 {
        self.mu[(t - 1) * self.design.h + (h - 1)]
    }
}

const MU_EPS: f64 = 1e-10;

fn shrunk_start(counts: &[u64], positives: &[u64]) -> Vec<f64> {
    counts
        .iter()
        .zip(positives)
        .map(|(&n, &k)| {
            if n == 0 {
                0.5
            } else {
                (k as f64 + 0.5) / (n as f64 + 1.0)
            }
        })
        .collect()
}

/// Fit the weight-smoothing GLMM to aggregated stratum data.
pub fn fit_pql(
    summary: &StratumSummary,
    design: DesignMatrices,
    opts: &FitOptions,
) -> Result<FittedGlmm> {
    if summary.strata() != design.h || summary.time_points() != design.t {
        return Err(Error::DimensionMismatch(format!(
            "summary is {}x{} but design is {}x{}",
            summary.strata(),
            summary.time_points(),
            design.h,
            design.t
        )));
    }

    // Resolve per-block variance treatment; Fixed(0) drops the block.
    let modes = match &opts.variance_modes {
        Some(m) => {
            if m.len() != design.blocks.len() {
                return Err(Error::InvalidSpec(format!(
                    "{} variance modes for {} random blocks",
                    m.len(),
                    design.blocks.len()
                )));
            }
            m.clone()
        }
        None => vec![VarianceMode::Estimate; design.blocks.len()],
    };
    let design = drop_zero_blocks(design, &modes);
    let modes: Vec<VarianceMode> = modes
        .into_iter()
        .filter(|m| !matches!(m, VarianceMode::Fixed(v) if *v == 0.0))
        .collect();

    let m = design.cells();
    let counts: Vec<u64> = summary.cell_counts().to_vec();
    let positives: Vec<u64> = summary.cell_positives().to_vec();
    let n_f: Vec<f64> = counts.iter().map(|&n| n as f64).collect();
    let ybar: Vec<f64> = counts
        .iter()
        .zip(&positives)
        .map(|(&n, &k)| if n == 0 { 0.0 } else { k as f64 / n as f64 })
        .collect();

    let mut mu: Vec<f64> = match &opts.start_mu {
        Some(start) if start.len() == m => start
            .iter()
            .map(|&v| v.clamp(MU_EPS, 1.0 - MU_EPS))
            .collect(),
        _ => shrunk_start(&counts, &positives),
    };
    let mut eta: Vec<f64> = mu.iter().map(|&p| logit(p)).collect();

    let c = design.combined();
    let p = design.x.ncols();
    let ranges = design.block_ranges();
    let estimated: Vec<usize> = modes
        .iter()
        .enumerate()
        .filter_map(|(j, mo)| matches!(mo, VarianceMode::Estimate).then_some(j))
        .collect();

    let mut theta: Vec<f64> = modes
        .iter()
        .enumerate()
        .map(|(j, mo)| match mo {
            VarianceMode::Fixed(v) => *v,
            VarianceMode::Estimate => opts
                .start_theta
                .as_ref()
                .and_then(|t| t.get(j).copied())
                .unwrap_or(0.05)
                .max(VAR_FLOOR),
        })
        .collect();

    let mut beta = DVector::zeros(p);
    let mut b = DVector::zeros(design.z.ncols());
    let mut w = DVector::zeros(m);
    let mut ystar = DVector::zeros(m);
    let mut converged = false;
    let mut iterations = 0;
    let mut last_rel = f64::INFINITY;

    for iter in 1..=opts.max_iter {
        iterations = iter;
        for i in 0..m {
            if counts[i] == 0 {
                w[i] = 0.0;
                ystar[i] = 0.0;
            } else {
                let v = mu[i] * (1.0 - mu[i]);
                w[i] = n_f[i] * v;
                ystar[i] = eta[i] + (ybar[i] - mu[i]) / v;
            }
        }
        let lmm = WorkingLmm::new(&c, p, &ranges, &w, &ystar);

        let new_theta = if estimated.is_empty() {
            theta.clone()
        } else {
            // optimize only the estimated components, holding fixed ones;
            // run coarse while the linearization is still moving, tight
            // once the outer loop is nearly stationary
            let warm = iter > 1 || opts.start_theta.is_some();
            let inner_tol = if last_rel > 1e-5 { 1e-6 } else { 1e-11 };
            optimize_subset(&lmm, &ranges, &modes, &theta, warm, inner_tol)
        };
        let sol = lmm.solve(&new_theta)?;

        let rel = relative_change(&beta, &sol.beta, &theta, &new_theta, &estimated);
        last_rel = rel;
        beta = sol.beta;
        b = sol.b;
        theta = new_theta;

        let mut eta_new = &design.x * &beta;
        eta_new += &design.z * &b;
        // light damping if the linearization oscillates
        let damp = if iter > 60 { 0.5 } else { 1.0 };
        for i in 0..m {
            eta[i] = damp * eta_new[i] + (1.0 - damp) * eta[i];
            mu[i] = expit(eta[i]).clamp(MU_EPS, 1.0 - MU_EPS);
        }

        if iter > 1 && rel < opts.tol {
            converged = true;
            // re-expose the undamped predictor so mu = expit(X beta + Z b)
            for i in 0..m {
                eta[i] = eta_new[i];
                mu[i] = expit(eta[i]).clamp(MU_EPS, 1.0 - MU_EPS);
            }
            break;
        }
    }

    for i in 0..m {
        if counts[i] > 0 {
            w[i] = n_f[i] * mu[i] * (1.0 - mu[i]);
        }
    }
    let fit = FittedGlmm {
        design,
        beta,
        b,
        theta,
        eta: DVector::from_vec(eta),
        mu: DVector::from_vec(mu),
        work_weights: w,
        counts,
        converged,
        iterations,
    };
    if fit.converged {
        Ok(fit)
    } else {
        Err(Error::NotConverged {
            iterations,
            last: Box::new(fit),
        })
    }
}

fn drop_zero_blocks(design: DesignMatrices, modes: &[VarianceMode]) -> DesignMatrices {
    if !modes
        .iter()
        .any(|m| matches!(m, VarianceMode::Fixed(v) if *v == 0.0))
    {
        return design;
    }
    let keep: Vec<usize> = design
        .blocks
        .iter()
        .enumerate()
        .filter_map(|(j, _)| (!matches!(modes[j], VarianceMode::Fixed(v) if v == 0.0)).then_some(j))
        .collect();
    let mut cols = Vec::new();
    let mut blocks = Vec::new();
    let mut offset = 0;
    for &j in &keep {
        let block = &design.blocks[j];
        let len = block.cols.len();
        cols.extend(block.cols.clone());
        blocks.push(RandomBlock {
            kind: block.kind,
            cols: offset..offset + len,
        });
        offset += len;
    }
    let z = design.z.select_columns(&cols);
    DesignMatrices {
        z,
        blocks,
        ..design
    }
}

fn optimize_subset(
    lmm: &WorkingLmm<'_>,
    ranges: &[Range<usize>],
    modes: &[VarianceMode],
    theta: &[f64],
    warm: bool,
    tol: f64,
) -> Vec<f64> {
    let all_estimated = modes.iter().all(|m| matches!(m, VarianceMode::Estimate));
    if all_estimated {
        return lmm.optimize(theta, warm, tol);
    }
    // Some components are pinned: optimize the free ones jointly while the
    // solver still sees every block, by running the full optimizer and
    // resetting the pinned coordinates each time is not possible through
    // the WorkingLmm API; instead optimize over the free coordinates via
    // the same machinery on a wrapper objective.
    let _ = ranges;
    let free: Vec<usize> = modes
        .iter()
        .enumerate()
        .filter_map(|(j, m)| matches!(m, VarianceMode::Estimate).then_some(j))
        .collect();
    let mut current = theta.to_vec();
    // coordinate sweeps with golden section through neg_reml directly
    let mut sweep_window = if warm { 0.5 } else { 4.0 };
    for _sweep in 0..30 {
        let mut max_delta = 0.0f64;
        for &j in &free {
            let eval = |v: f64| {
                let mut s = current.clone();
                s[j] = v.exp();
                lmm.neg_reml(&s)
            };
            let rho = current[j].max(VAR_FLOOR).ln();
            let best = golden_on(&eval, rho, sweep_window, tol);
            if eval(best) < eval(rho) - 1e-12 {
                max_delta = max_delta.max((best - rho).abs());
                current[j] = best.exp();
            }
        }
        sweep_window = (sweep_window * 0.5).max(0.05);
        if max_delta < tol {
            break;
        }
    }
    current
}

fn golden_on(f: impl Fn(f64) -> f64, center: f64, window: f64, tol: f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut lo = (center - window).max(-23.025_850_929_940_457);
    let mut hi = (center + window).min(13.815_510_557_964_274);
    let mut c = hi - INV_PHI * (hi - lo);
    let mut d = lo + INV_PHI * (hi - lo);
    let mut fc = f(c);
    let mut fd = f(d);
    while hi - lo > tol {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - INV_PHI * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + INV_PHI * (hi - lo);
            fd = f(d);
        }
    }
    if fc < fd {
        c
    } else {
        d
    }
}

fn relative_change(
    beta_old: &DVector<f64>,
    beta_new: &DVector<f64>,
    theta_old: &[f64],
    theta_new: &[f64],
    estimated: &[usize],
) -> f64 {
    let mut rel = 0.0f64;
    for i in 0..beta_old.len() {
        rel = rel.max((beta_new[i] - beta_old[i]).abs() / (1.0 + beta_old[i].abs()));
    }
    for &j in estimated {
        let old = theta_old[j];
        let new = theta_new[j];
        if old <= VAR_FLOOR && new <= VAR_FLOOR {
            continue; // both at the floor: treat as converged-at-zero
        }
        rel = rel.max((new - old).abs() / (1.0 + old.abs()));
    }
    rel
}

/// Fitted stratum means, one column per time point.
pub fn predict_strata(fit: &FittedGlmm) -> DMatrix<f64> {
    DMatrix::from_fn(fit.design.h, fit.design.t, |h, t| {
        fit.mu[t * fit.design.h + h]
    })
}

/// Prediction covariance of the fitted cell means:
/// `Theta = Delta C (C' Sigma_p^{-1} C + B)^{-1} C' Delta` with
/// `Delta = diag(mu (1 - mu))`, `C = [X Z]`,
/// `Sigma_p^{-1} = diag(n mu (1 - mu))` and `B = blockdiag(0, G^{-1})`.
pub fn prediction_covariance(fit: &FittedGlmm) -> Result<DMatrix<f64>> {
    let chol = mme_cholesky(fit)?;
    let c = fit.design.combined();
    let m = fit.design.cells();
    // rows scaled by Delta
    let mut cd = c.transpose();
    for i in 0..m {
        let d = fit.mu[i] * (1.0 - fit.mu[i]);
        cd.column_mut(i).scale_mut(d);
    }
    let solved = chol.solve(&cd);
    let theta = cd.transpose() * solved;
    // symmetrize away factorization noise
    Ok(0.5 * (&theta + theta.transpose()))
}

/// Quadratic form `d' Theta d` without materializing `Theta`.
pub(crate) fn theta_quadratic(fit: &FittedGlmm, d_cells: &DVector<f64>) -> Result<f64> {
    let chol = mme_cholesky(fit)?;
    let c = fit.design.combined();
    let m = fit.design.cells();
    let mut scaled = DVector::zeros(m);
    for i in 0..m {
        scaled[i] = d_cells[i] * fit.mu[i] * (1.0 - fit.mu[i]);
    }
    let v = c.transpose() * scaled;
    let solved = chol.solve(&v);
    Ok(v.dot(&solved))
}

fn mme_cholesky(fit: &FittedGlmm) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let c = fit.design.combined();
    let p = fit.design.x.ncols();
    let ranges = fit.design.block_ranges();
    let lmm = WorkingLmm::new(
        &c,
        p,
        &ranges,
        &fit.work_weights,
        &DVector::zeros(c.nrows()),
    );
    let floored: Vec<f64> = fit.theta.iter().map(|&t| t.max(VAR_FLOOR)).collect();
    Ok(lmm.solve(&floored)?.chol)
}

/// Convenience wrapper: build the design for `spec` and fit.
pub fn fit_model(
    spec: &ModelSpec,
    summary: &StratumSummary,
    opts: &FitOptions,
) -> Result<FittedGlmm> {
    let t = (summary.time_points() > 1).then(|| summary.time_points());
    let design = build_design(spec, summary.strata(), t)?;
    fit_pql(summary, design, opts)
}
