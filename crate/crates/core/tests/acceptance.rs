//! Acceptance suite: every release criterion runs here at its stated
//! tolerance and prints one PASS/FAIL line.
//!
//! The Monte Carlo cells reuse one shared run per population model
//! (25 populations x 10 samples at the large-population size), so the
//! whole suite stays in the tens of minutes on a single core. Run with
//! `cargo test -p svysmooth --test acceptance -- --nocapture` to see the
//! per-criterion lines.

use std::collections::BTreeMap;
use std::sync::{Mutex, OnceLock};

use svysmooth::data::{PopulationMargins, StratumSummary};
use svysmooth::design::{design_variance, poststratified_mean, trimmed_mean, DesignKind};
use svysmooth::glmm::{fit_model, Family, FitOptions, ModelSpec};
use svysmooth::resample::{bootstrap_variance, confidence_interval, CiScale};
use svysmooth::rng::{domain, stream_rng};
use svysmooth::sim::{
    draw_sample, gen_population, run_scenario, sample_sizes, EstimatorId, MetricsTable,
    PopulationModel, PopulationSize, ScenarioConfig, WsVariance,
};
use svysmooth::smooth::{
    pseudo_inclusion, ws_estimate, ws_estimate_slice, ws_greg_estimate_slice,
    ws_variance_analytical,
};
use svysmooth::{expit, BootstrapConfig};

const SEED: u64 = 20151201;
const TREND_SEED: u64 = 424242;

fn cell_config(model: PopulationModel, estimators: Vec<EstimatorId>) -> ScenarioConfig {
    ScenarioConfig {
        model,
        population_size: PopulationSize::N1,
        sample_size: 5_000,
        populations: 25,
        samples_per_population: 10,
        estimators,
        w0: 3.0,
        bootstrap_replicates: 250,
        jackknife_groups: 250,
        seed: SEED,
        ws_variance: WsVariance::Analytical,
        level: 0.95,
    }
}

fn estimators_for(model: PopulationModel) -> Vec<EstimatorId> {
    match model {
        PopulationModel::Null => {
            vec![EstimatorId::Psm, EstimatorId::Unw, EstimatorId::NparGreg]
        }
        PopulationModel::Quad0 => {
            vec![EstimatorId::Unw, EstimatorId::Npar, EstimatorId::NparGreg]
        }
        _ => vec![EstimatorId::NparGreg],
    }
}

/// Shared scenario cells for criteria 1 and 2.
fn table_cell(model: PopulationModel) -> &'static MetricsTable {
    static CELLS: OnceLock<Mutex<BTreeMap<&'static str, &'static MetricsTable>>> = OnceLock::new();
    let cells = CELLS.get_or_init(|| Mutex::new(BTreeMap::new()));
    let key = model_key(model);
    let mut guard = cells.lock().unwrap();
    if let Some(table) = guard.get(key) {
        return table;
    }
    let table = run_scenario(&cell_config(model, estimators_for(model))).unwrap();
    let leaked: &'static MetricsTable = Box::leak(Box::new(table));
    guard.insert(key, leaked);
    leaked
}

fn model_key(model: PopulationModel) -> &'static str {
    match model {
        PopulationModel::Null => "NULL",
        PopulationModel::Xre => "XRE",
        PopulationModel::Lin0 => "LIN0",
        PopulationModel::Lin1 => "LIN1",
        PopulationModel::Quad0 => "QUAD0",
        PopulationModel::Quad1 => "QUAD1",
        PopulationModel::Exp0 => "EXP0",
        PopulationModel::Exp1 => "EXP1",
        PopulationModel::F1 => "F1",
        PopulationModel::F2 => "F2",
        PopulationModel::F3 => "F3",
        PopulationModel::F4 => "F4",
    }
}

fn within_relative(observed: f64, target: f64, tol: f64) -> bool {
    (observed - target).abs() <= tol * target
}

#[test]
fn criterion_1_mse_spot_reproduction() {
    let null = table_cell(PopulationModel::Null);
    let quad = table_cell(PopulationModel::Quad0);
    let checks = [
        (
            "NULL psm",
            null.row(EstimatorId::Psm, 0).unwrap().mse * 1e4,
            1.70,
        ),
        (
            "NULL unw",
            null.row(EstimatorId::Unw, 0).unwrap().mse * 1e4,
            0.46,
        ),
        (
            "QUAD0 unw",
            quad.row(EstimatorId::Unw, 0).unwrap().mse * 1e4,
            16.09,
        ),
        (
            "QUAD0 npar",
            quad.row(EstimatorId::Npar, 0).unwrap().mse * 1e4,
            1.63,
        ),
        (
            "QUAD0 npar-greg",
            quad.row(EstimatorId::NparGreg, 0).unwrap().mse * 1e4,
            1.52,
        ),
    ];
    let mut ok = true;
    let mut detail = String::new();
    for (name, observed, target) in checks {
        let hit = within_relative(observed, target, 0.35);
        ok &= hit;
        detail.push_str(&format!("{name} {observed:.2} (target {target}); "));
    }
    // the smoothing advantage itself: unweighted MSE dwarfs the spline's
    let ratio =
        quad.row(EstimatorId::Unw, 0).unwrap().mse / quad.row(EstimatorId::Npar, 0).unwrap().mse;
    ok &= ratio > 3.0;
    detail.push_str(&format!("unw/npar ratio {ratio:.1} (> 3)"));
    println!(
        "[criterion 1] {} — MSE x 1e4 within 35%: {detail}",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "{detail}");
}

#[test]
fn criterion_2_coverage_spot_reproduction() {
    let null = table_cell(PopulationModel::Null);
    let quad = table_cell(PopulationModel::Quad0);

    let psm_cov = null.row(EstimatorId::Psm, 0).unwrap().coverage * 100.0;
    let psm_ok = (psm_cov - 95.2).abs() <= 3.0;

    let unw_cov = quad.row(EstimatorId::Unw, 0).unwrap().coverage * 100.0;
    let unw_ok = unw_cov <= 2.0;

    let models = [
        PopulationModel::Null,
        PopulationModel::Xre,
        PopulationModel::Lin0,
        PopulationModel::Lin1,
        PopulationModel::Quad0,
        PopulationModel::Quad1,
        PopulationModel::Exp0,
        PopulationModel::Exp1,
    ];
    let mut greg_ok = true;
    let mut greg_detail = String::new();
    for model in models {
        let cov = table_cell(model)
            .row(EstimatorId::NparGreg, 0)
            .unwrap()
            .coverage
            * 100.0;
        greg_ok &= cov >= 90.0;
        greg_detail.push_str(&format!("{} {cov:.1}%; ", model_key(model)));
    }

    let ok = psm_ok && unw_ok && greg_ok;
    println!(
        "[criterion 2] {} — psm NULL {psm_cov:.1}% (95.2 +- 3), unw QUAD0 {unw_cov:.1}% (<= 2), npar-greg >= 90%: {greg_detail}",
        if ok { "PASS" } else { "FAIL" }
    );
    // On the steep-decay EXP0 population the GREG-adjusted spline
    // estimator keeps a small negative bias; its jackknife intervals
    // cover about 88-89% over 250 replicates (MC SE ~2 points), under
    // the sharp 90% floor asserted here.
    assert!(
        ok,
        "psm {psm_cov:.1} ok={psm_ok}; unw {unw_cov:.1} ok={unw_ok}; npar-greg {greg_detail} ok={greg_ok}"
    );
}

#[test]
fn criterion_3_trend_valley_behavior() {
    let cfg = ScenarioConfig {
        model: PopulationModel::F4,
        population_size: PopulationSize::N2,
        sample_size: 2_500,
        populations: 25,
        samples_per_population: 10,
        estimators: vec![EstimatorId::Npar, EstimatorId::NparGreg],
        w0: 3.0,
        bootstrap_replicates: 250,
        jackknife_groups: 250,
        seed: TREND_SEED,
        ws_variance: WsVariance::Analytical,
        level: 0.95,
    };
    let table = run_scenario(&cfg).unwrap();

    let mut valley_ok = true;
    let mut valley_detail = String::new();
    for t in [14usize, 15, 16] {
        let npar = table.row(EstimatorId::Npar, t).unwrap().mse;
        let greg = table.row(EstimatorId::NparGreg, t).unwrap().mse;
        valley_ok &= npar > greg;
        valley_detail.push_str(&format!(
            "t={t}: npar {:.2} vs npar-greg {:.2}; ",
            npar * 1e4,
            greg * 1e4
        ));
    }

    let mut coverage_ok = true;
    let mut worst = (0usize, 1.0f64);
    for t in 1..=30 {
        let cov = table.row(EstimatorId::NparGreg, t).unwrap().coverage;
        if cov < worst.1 {
            worst = (t, cov);
        }
        coverage_ok &= cov >= 0.90;
    }

    let ok = valley_ok && coverage_ok;
    println!(
        "[criterion 3] {} — valley MSE(npar) > MSE(npar-greg): {valley_detail}min npar-greg coverage {:.1}% at t={}",
        if ok { "PASS" } else { "FAIL" },
        worst.1 * 100.0,
        worst.0
    );
    assert!(
        ok,
        "valley {valley_detail}; min coverage {:.3} at t={}",
        worst.1, worst.0
    );
}

#[test]
fn criterion_4_exact_identities() {
    let s = StratumSummary::from_cells(2, 1, vec![50, 50], vec![10, 20]).unwrap();
    let m = PopulationMargins::from_cells(2, 1, vec![100, 900]).unwrap();
    let slice = s.at(1);
    let margin = m.at(1);

    // trimming with an infinite cutoff IS the post-stratified mean
    let psm = poststratified_mean(&slice, &margin).unwrap();
    let exact_trim = trimmed_mean(&slice, &margin, f64::INFINITY).unwrap() == psm;

    // census: the model-based estimator returns the population mean exactly
    let census_s = StratumSummary::from_cells(2, 1, vec![100, 900], vec![23, 361]).unwrap();
    let census_m = PopulationMargins::from_cells(2, 1, vec![100, 900]).unwrap();
    let ws = ws_estimate_slice(&[0.77, 0.13], &census_s.at(1), &census_m.at(1)).unwrap();
    let exact_census = ws == 384.0 / 1000.0;

    // census pseudo-inclusion probabilities give back the psm
    let pi_census = pseudo_inclusion(&slice, &margin, 1e12).unwrap();
    let greg_psm = ws_greg_estimate_slice(&[0.31, 0.47], &slice, &margin, &pi_census).unwrap();
    let greg_reduces = (greg_psm - psm).abs() <= 1e-10;

    // frozen hand oracles
    let mut oracle_ok = true;
    let mut check = |name: &str, observed: f64, expected: f64| {
        let hit = (observed - expected).abs() <= 1e-10 * (1.0 + expected.abs());
        if !hit {
            println!("  oracle {name}: {observed} vs {expected}");
        }
        oracle_ok &= hit;
    };
    check(
        "trimmed w0=1.5",
        trimmed_mean(&slice, &margin, 1.5).unwrap(),
        0.35,
    );
    check(
        "ws hand",
        ws_estimate_slice(&[0.25, 0.35], &slice, &margin).unwrap(),
        0.34,
    );
    let pi = pseudo_inclusion(&slice, &margin, 1.5).unwrap();
    check("pi_1", pi.pi[0], 0.4);
    check("pi_2", pi.pi[1], 1.0 / 15.0);
    check("gamma", pi.gamma, 0.8);
    check(
        "greg hand",
        ws_greg_estimate_slice(&[0.25, 0.35], &slice, &margin, &pi).unwrap(),
        0.37125,
    );
    check(
        "psm variance",
        design_variance(DesignKind::Psm, &slice, &margin, 3.0).unwrap(),
        3.92e-3,
    );
    let (lo, hi) = confidence_interval(0.5, 0.0025, 0.95, CiScale::Logit).unwrap();
    let z = 1.959963984540054_f64;
    check("ci lo", lo, expit(-z * 0.2));
    check("ci hi", hi, expit(z * 0.2));
    check(
        "exp0 probability",
        expit(-1.0 + 2.0 * (-1.0f64).exp()),
        0.434321434817833,
    );

    let ok = exact_trim && exact_census && greg_reduces && oracle_ok;
    println!(
        "[criterion 4] {} — trim(inf)==psm {}, ws census exact {}, greg(pi=n/N)->psm {}, hand oracles {}",
        if ok { "PASS" } else { "FAIL" },
        exact_trim,
        exact_census,
        greg_reduces,
        oracle_ok
    );
    assert!(ok);
}

#[test]
fn criterion_5_cross_method_variance_agreement() {
    // one NULL population at the small size, samples of 2500
    let mut rng = stream_rng(SEED, domain::POPULATION, 90);
    let population = gen_population(PopulationModel::Null, PopulationSize::N2, &mut rng).unwrap();
    let row = sample_sizes(PopulationSize::N2, 2_500).unwrap();
    let spec = ModelSpec::new(Family::Npar);

    let mut sample_rng = stream_rng(SEED, domain::SAMPLE, 91);
    let summary = draw_sample(&population, &row, &mut sample_rng).unwrap();
    let fit = fit_model(&spec, &summary, &FitOptions::default()).unwrap();

    let analytical_se = ws_variance_analytical(&fit, &summary, &population.margins)
        .unwrap()
        .sqrt();
    let cfg = BootstrapConfig {
        replicates: 250,
        seed: SEED ^ 0xb00,
    };
    let bootstrap = bootstrap_variance(&fit, &summary, &population.margins, &cfg).unwrap();
    let bootstrap_se = bootstrap.variance[0].sqrt();

    // Monte Carlo: 250 independent samples from the same population
    let truth = population.truth[0];
    let mut sq = 0.0;
    let reps = 250;
    for r in 0..reps {
        let mut rng = stream_rng(SEED, domain::SAMPLE, 1000 + r);
        let s = draw_sample(&population, &row, &mut rng).unwrap();
        let f = fit_model(&spec, &s, &FitOptions::default()).unwrap();
        let est = ws_estimate(&f, &s, &population.margins).unwrap();
        sq += (est - truth) * (est - truth);
    }
    let mc_se = (sq / reps as f64).sqrt();

    let pairs = [
        ("analytical/bootstrap", analytical_se, bootstrap_se),
        ("analytical/monte-carlo", analytical_se, mc_se),
        ("bootstrap/monte-carlo", bootstrap_se, mc_se),
    ];
    let mut ok = true;
    let mut detail = String::new();
    for (name, a, b) in pairs {
        let agree = (a - b).abs() <= 0.30 * a.max(b);
        ok &= agree;
        detail.push_str(&format!("{name}: {a:.5} vs {b:.5}; "));
    }
    println!(
        "[criterion 5] {} — SEs pairwise within 30% (dropped bootstrap replicates: {}): {detail}",
        if ok { "PASS" } else { "FAIL" },
        bootstrap.dropped
    );
    assert!(ok, "{detail}");
}

#[test]
fn criterion_6_glmm_recovery() {
    // spline fit on noiseless large-sample logit-linear data
    let h = 18;
    let counts = vec![1_000_000u64; h];
    let positives: Vec<u64> = (1..=h)
        .map(|i| (1_000_000.0 * expit(-2.0 + 0.2 * i as f64)).round() as u64)
        .collect();
    let s = StratumSummary::from_cells(h, 1, counts, positives).unwrap();
    let fit = fit_model(&ModelSpec::new(Family::Npar), &s, &FitOptions::default()).unwrap();
    let mut max_gap = 0.0f64;
    for i in 1..=h {
        let truth = -2.0 + 0.2 * i as f64;
        max_gap = max_gap.max((fit.eta[i - 1] - truth).abs());
    }
    let recovery_ok = max_gap < 1e-2;

    // homogeneous data: the exchangeable variance collapses
    let s = StratumSummary::from_cells(6, 1, vec![400; 6], vec![120; 6]).unwrap();
    let xre = fit_model(&ModelSpec::new(Family::Xre), &s, &FitOptions::default()).unwrap();
    let variance_ok = xre.theta[0] < 1e-6;

    let ok = recovery_ok && variance_ok;
    println!(
        "[criterion 6] {} — max linear-predictor gap {max_gap:.2e} (< 1e-2), homogeneous sigma2 {:.2e} (< 1e-6)",
        if ok { "PASS" } else { "FAIL" },
        xre.theta[0]
    );
    assert!(ok);
}

#[test]
fn criterion_7_determinism_across_parallelism() {
    let cfg = ScenarioConfig {
        model: PopulationModel::Null,
        population_size: PopulationSize::N2,
        sample_size: 2_500,
        populations: 2,
        samples_per_population: 3,
        estimators: vec![EstimatorId::Psm, EstimatorId::Npar, EstimatorId::NparGreg],
        w0: 3.0,
        bootstrap_replicates: 25,
        jackknife_groups: 40,
        seed: 777,
        ws_variance: WsVariance::Bootstrap,
        level: 0.95,
    };
    let single = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let quad = rayon::ThreadPoolBuilder::new()
        .num_threads(4)
        .build()
        .unwrap();
    let a = single.install(|| run_scenario(&cfg).unwrap().to_csv());
    let b = quad.install(|| run_scenario(&cfg).unwrap().to_csv());
    let c = quad.install(|| run_scenario(&cfg).unwrap().to_csv());
    let ok = a == b && b == c;
    println!(
        "[criterion 7] {} — byte-identical metrics across 1-thread and 4-thread pools and reruns",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok);
}
