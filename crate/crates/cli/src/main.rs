//! Command-line front end: estimate overall prevalence, estimate a time
//! trend, or run a simulation scenario. All diagnostics go to stderr;
//! data lands in files only.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::RngCore;
use serde::Serialize;
use sha2::{Digest, Sha256};

use svysmooth::data::{self, PopulationMargins, StratumSummary};
use svysmooth::design::{design_point, DesignKind};
use svysmooth::error::Error;
use svysmooth::glmm::{fit_model, BasisKind, Family, FitOptions, ModelSpec};
use svysmooth::resample::{
    bootstrap_variance, confidence_interval_with_fallback, greg_jackknife_variance,
    BootstrapConfig, CiScale, JackknifeConfig,
};
use svysmooth::rng::{derive_seed, domain};
use svysmooth::sim::{run_scenario, PopulationSize, ScenarioConfig};
use svysmooth::smooth::{ws_estimate, ws_greg_estimate, ws_variance_analytical};
use svysmooth::trend::{
    fit_trend_model, trend_estimates, trend_greg_estimates, trend_pseudo_inclusion,
    trend_variance_analytical, TrendFit,
};

#[derive(Parser)]
#[command(name = "svysmooth", version, about = "Prevalence and trend estimation from observational surveys", long_about = None)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the overall prevalence from a sample and margins file.
    Estimate(EstimateArgs),
    /// Estimate a per-time-point trend (the sample needs a `t` column).
    Trend(TrendArgs),
    /// Run a simulation scenario from a JSON file.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelArg {
    Unw,
    Psm,
    Trim,
    Xre,
    Lin,
    Npar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum VarianceArg {
    Analytical,
    Bootstrap,
    Jackknife,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum BasisArg {
    ThinPlate,
    TruncatedLinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum CiScaleArg {
    Logit,
    Identity,
}

#[derive(Args, Debug)]
struct CommonArgs {
    /// Weight-trimming cutoff for `trim` and the GREG adjustments.
    #[arg(long, default_value_t = 3.0)]
    w0: f64,
    /// Bootstrap replicate count.
    #[arg(long = "B", default_value_t = 250)]
    bootstrap_replicates: usize,
    /// Jackknife subgroup count.
    #[arg(long = "G", default_value_t = 250)]
    jackknife_groups: usize,
    /// Confidence level of the reported interval.
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Master seed; drawn from the OS and recorded when absent.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker thread cap (default: all cores). Results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Output path prefix.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Scale for the confidence interval.
    #[arg(long = "ci-scale", value_enum, default_value_t = CiScaleArg::Logit)]
    ci_scale: CiScaleArg,
    /// Record wall-clock timing in the manifest (off keeps reruns
    /// byte-identical).
    #[arg(long = "record-timing", default_value_t = false)]
    record_timing: bool,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    /// Sample CSV with columns `stratum,y[,t]`.
    sample: PathBuf,
    /// Margins CSV with columns `stratum,N`.
    margins: PathBuf,
    #[arg(long, value_enum)]
    model: ModelArg,
    /// Apply the GREG adjustment (model-based families only).
    #[arg(long, default_value_t = false)]
    greg: bool,
    /// Variance method; defaults to jackknife with --greg, closed
    /// form/analytical otherwise.
    #[arg(long, value_enum)]
    variance: Option<VarianceArg>,
    #[arg(long, value_enum, default_value_t = BasisArg::ThinPlate)]
    basis: BasisArg,
    /// Stratum-spline knot count (npar; default one per stratum).
    #[arg(long)]
    knots: Option<usize>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args, Debug)]
struct TrendArgs {
    /// Sample CSV with columns `stratum,y,t`.
    sample: PathBuf,
    /// Margins CSV with columns `stratum,N[,t]`.
    margins: PathBuf,
    #[arg(long, value_enum)]
    model: ModelArg,
    #[arg(long, default_value_t = false)]
    greg: bool,
    #[arg(long, value_enum)]
    variance: Option<VarianceArg>,
    #[arg(long, value_enum, default_value_t = BasisArg::ThinPlate)]
    basis: BasisArg,
    #[arg(long)]
    knots: Option<usize>,
    /// Time-spline knot count (default min(20, T)).
    #[arg(long = "time-knots")]
    time_knots: Option<usize>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Scenario JSON file.
    scenario: PathBuf,
    /// Allow large-population (N1) scenarios.
    #[arg(long, default_value_t = false)]
    full: bool,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long = "record-timing", default_value_t = false)]
    record_timing: bool,
}

#[derive(Serialize)]
struct Manifest {
    command: String,
    version: &'static str,
    seed: u64,
    threads: Option<usize>,
    inputs: Vec<InputDigest>,
    config: serde_json::Value,
    timing_ms: Option<u128>,
}

#[derive(Serialize)]
struct InputDigest {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct EstimateOutput {
    estimator: String,
    point: f64,
    variance: f64,
    variance_method: VarianceArg,
    ci: (f64, f64),
    level: f64,
    ci_scale: CiScaleArg,
    ci_fallback: bool,
    n: u64,
    strata: usize,
    time_points: usize,
    w0: Option<f64>,
    variance_components: Option<Vec<f64>>,
    dropped_bootstrap_replicates: Option<usize>,
    warnings: Vec<String>,
    manifest: Manifest,
}

#[derive(Serialize)]
struct TrendPoint {
    t: usize,
    point: f64,
    variance: f64,
    ci_lo: f64,
    ci_hi: f64,
    ci_fallback: bool,
}

#[derive(Serialize)]
struct TrendOutput {
    estimator: String,
    variance_method: VarianceArg,
    level: f64,
    ci_scale: CiScaleArg,
    n: u64,
    strata: usize,
    time_points: usize,
    w0: Option<f64>,
    variance_components: Option<Vec<f64>>,
    per_time: Vec<TrendPoint>,
    warnings: Vec<String>,
    manifest: Manifest,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Estimate(args) => cmd_estimate(args),
        Command::Trend(args) => cmd_trend(args),
        Command::Simulate(args) => cmd_simulate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let payload = serde_json::json!({
                "error": { "kind": error_kind(&e), "message": e.to_string() }
            });
            eprintln!("{payload}");
            ExitCode::from(2)
        }
    }
}

enum CliError {
    Domain(Error),
    Io(std::io::Error),
    Config(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Domain(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "{e}"),
            CliError::Config(m) => write!(f, "{m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Domain(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

fn error_kind(e: &CliError) -> String {
    match e {
        CliError::Domain(e) => e.kind().to_string(),
        CliError::Io(_) => "Io".to_string(),
        CliError::Config(_) => "Config".to_string(),
    }
}

type CliResult = Result<(), CliError>;

fn init_threads(threads: Option<usize>) {
    if let Some(n) = threads {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
}

fn resolve_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        let mut seed = rand::rng().next_u64();
        if seed == 0 {
            seed = 1;
        }
        seed
    })
}

fn digest_file(path: &Path) -> Result<InputDigest, CliError> {
    let bytes = fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(InputDigest {
        path: path.display().to_string(),
        sha256: format!("{:x}", hasher.finalize()),
    })
}

fn family_of(model: ModelArg) -> Option<Family> {
    match model {
        ModelArg::Xre => Some(Family::Xre),
        ModelArg::Lin => Some(Family::Lin),
        ModelArg::Npar => Some(Family::Npar),
        _ => None,
    }
}

fn basis_of(basis: BasisArg) -> BasisKind {
    match basis {
        BasisArg::ThinPlate => BasisKind::ThinPlate,
        BasisArg::TruncatedLinear => BasisKind::TruncatedLinear,
    }
}

fn estimator_name(model: ModelArg, greg: bool) -> String {
    let base = match model {
        ModelArg::Unw => "unw",
        ModelArg::Psm => "psm",
        ModelArg::Trim => "trim",
        ModelArg::Xre => "xre",
        ModelArg::Lin => "lin",
        ModelArg::Npar => "npar",
    };
    if greg {
        format!("{base}-greg")
    } else {
        base.to_string()
    }
}

/// Resolve and validate the variance method against the estimator.
fn resolve_variance(
    model: ModelArg,
    greg: bool,
    requested: Option<VarianceArg>,
) -> Result<VarianceArg, CliError> {
    let family = family_of(model);
    if greg && family.is_none() {
        return Err(CliError::Config(format!(
            "--greg requires a model-based family (xre, lin, npar), not {}",
            estimator_name(model, false)
        )));
    }
    let method = requested.unwrap_or(if greg {
        VarianceArg::Jackknife
    } else {
        VarianceArg::Analytical
    });
    match (family, greg, method) {
        (None, _, VarianceArg::Analytical) => Ok(method),
        (None, _, _) => Err(CliError::Config(
            "design estimators use their closed-form variance (--variance analytical)".into(),
        )),
        (Some(_), false, VarianceArg::Jackknife) => Err(CliError::Config(
            "the jackknife is the GREG variance; use --greg or pick analytical/bootstrap".into(),
        )),
        (Some(_), true, m) if m != VarianceArg::Jackknife => Err(CliError::Config(
            "GREG-adjusted estimators use the jackknife variance".into(),
        )),
        _ => Ok(method),
    }
}

fn load_aligned(
    sample_path: &Path,
    margins_path: &Path,
    pool_time: bool,
) -> Result<(StratumSummary, PopulationMargins), CliError> {
    let (sample, sample_labels) = data::load_sample(sample_path)?;
    let (margins, margin_labels) = data::load_margins(margins_path)?;
    let sample = if pool_time && sample.has_time() {
        if margins.time_points() > 1 {
            return Err(CliError::Config(
                "margins vary over time; overall prevalence needs one-way margins".into(),
            ));
        }
        sample.without_time()
    } else {
        sample
    };
    let (sample, margins) =
        data::align_sample_to_margins(&sample, &sample_labels, &margins, &margin_labels)?;
    let t = sample.has_time().then(|| sample.max_time());
    let summary = data::aggregate(&sample, margins.strata(), t)?;
    Ok((summary, margins))
}

fn write_outputs(
    prefix: &Path,
    json: &impl Serialize,
    csv: &str,
    manifest_json: &str,
) -> CliResult {
    let json_path = prefix.with_extension("json");
    let csv_path = prefix.with_extension("csv");
    let manifest_path = manifest_path(prefix);
    fs::write(
        &json_path,
        serde_json::to_string_pretty(json).expect("serialize") + "\n",
    )?;
    fs::write(&csv_path, csv)?;
    fs::write(&manifest_path, manifest_json)?;
    eprintln!(
        "wrote {}, {}, {}",
        json_path.display(),
        csv_path.display(),
        manifest_path.display()
    );
    Ok(())
}

fn manifest_path(prefix: &Path) -> PathBuf {
    let mut name = prefix.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    prefix.with_file_name(name)
}

fn cmd_estimate(args: EstimateArgs) -> CliResult {
    init_threads(args.common.threads);
    let started = Instant::now();
    let seed = resolve_seed(args.common.seed);
    let variance_method = resolve_variance(args.model, args.greg, args.variance)?;
    // a timed sample is pooled over its time points for the overall
    // prevalence; each response stays one unit
    let (summary, margins) = load_aligned(&args.sample, &args.margins, true)?;
    let mut warnings = Vec::new();

    let family = family_of(args.model);
    let uses_w0 = args.greg || args.model == ModelArg::Trim;
    let (point, variance, components, dropped) = match family {
        None => {
            let kind = match args.model {
                ModelArg::Unw => DesignKind::Unw,
                ModelArg::Psm => DesignKind::Psm,
                _ => DesignKind::Trim,
            };
            let (pt, var) = design_point(kind, &summary.at(1), &margins.at(1), args.common.w0)?;
            (pt, var, None, None)
        }
        Some(family) => {
            let spec = ModelSpec {
                basis: basis_of(args.basis),
                knots: args.knots,
                w0: args.common.w0,
                ..ModelSpec::new(family)
            };
            let fit = fit_model(&spec, &summary, &FitOptions::default())?;
            if args.greg {
                let pt = ws_greg_estimate(&fit, &summary, &margins, args.common.w0)?;
                if !(0.0..=1.0).contains(&pt) {
                    warnings.push(format!(
                        "GREG point estimate {pt} lies outside [0, 1]; reported as-is"
                    ));
                }
                let jk = JackknifeConfig {
                    groups: args.common.jackknife_groups,
                    seed: derive_seed(seed, domain::CLI, 1),
                };
                let var =
                    greg_jackknife_variance(&fit, &summary, &margins, args.common.w0, &jk)?[0];
                (pt, var, Some(fit.theta.clone()), None)
            } else {
                let pt = ws_estimate(&fit, &summary, &margins)?;
                match variance_method {
                    VarianceArg::Analytical => {
                        let var = ws_variance_analytical(&fit, &summary, &margins)?;
                        (pt, var, Some(fit.theta.clone()), None)
                    }
                    VarianceArg::Bootstrap => {
                        let cfg = BootstrapConfig {
                            replicates: args.common.bootstrap_replicates,
                            seed: derive_seed(seed, domain::CLI, 2),
                        };
                        let out = bootstrap_variance(&fit, &summary, &margins, &cfg)?;
                        (
                            pt,
                            out.variance[0],
                            Some(fit.theta.clone()),
                            Some(out.dropped),
                        )
                    }
                    VarianceArg::Jackknife => unreachable!("rejected above"),
                }
            }
        }
    };

    let scale = match args.common.ci_scale {
        CiScaleArg::Logit => CiScale::Logit,
        CiScaleArg::Identity => CiScale::Identity,
    };
    let (ci, fallback) =
        confidence_interval_with_fallback(point, variance, args.common.level, scale)?;
    if fallback {
        warnings.push(
            "point estimate degenerate on the logit scale; identity-scale interval reported".into(),
        );
    }

    let manifest = Manifest {
        command: "estimate".into(),
        version: env!("CARGO_PKG_VERSION"),
        seed,
        threads: args.common.threads,
        inputs: vec![digest_file(&args.sample)?, digest_file(&args.margins)?],
        config: serde_json::json!({
            "model": estimator_name(args.model, args.greg),
            "variance": variance_method,
            "w0": uses_w0.then_some(args.common.w0),
            "B": args.common.bootstrap_replicates,
            "G": args.common.jackknife_groups,
            "level": args.common.level,
            "basis": args.basis,
            "knots": args.knots,
            "ci_scale": args.common.ci_scale,
        }),
        timing_ms: args
            .common
            .record_timing
            .then(|| started.elapsed().as_millis()),
    };
    let manifest_json = serde_json::to_string_pretty(&manifest).expect("serialize") + "\n";

    let output = EstimateOutput {
        estimator: estimator_name(args.model, args.greg),
        point,
        variance,
        variance_method,
        ci,
        level: args.common.level,
        ci_scale: args.common.ci_scale,
        ci_fallback: fallback,
        n: summary.total(),
        strata: summary.strata(),
        time_points: 1,
        w0: uses_w0.then_some(args.common.w0),
        variance_components: components,
        dropped_bootstrap_replicates: dropped,
        warnings,
        manifest,
    };
    let csv = format!(
        "estimator,point,variance,ci_lo,ci_hi,level,variance_method\n{},{:e},{:e},{:e},{:e},{},{}\n",
        output.estimator,
        output.point,
        output.variance,
        output.ci.0,
        output.ci.1,
        output.level,
        variance_label(variance_method),
    );
    let prefix = args.common.out.unwrap_or_else(|| PathBuf::from("estimate"));
    write_outputs(&prefix, &output, &csv, &manifest_json)
}

fn variance_label(v: VarianceArg) -> &'static str {
    match v {
        VarianceArg::Analytical => "analytical",
        VarianceArg::Bootstrap => "bootstrap",
        VarianceArg::Jackknife => "jackknife",
    }
}

fn cmd_trend(args: TrendArgs) -> CliResult {
    init_threads(args.common.threads);
    let started = Instant::now();
    let seed = resolve_seed(args.common.seed);
    let variance_method = resolve_variance(args.model, args.greg, args.variance)?;
    let (summary, margins) = load_aligned(&args.sample, &args.margins, false)?;
    if summary.time_points() < 2 {
        return Err(CliError::Domain(Error::InvalidSpec(
            "trend estimation needs a sample with a `t` column and T >= 2".into(),
        )));
    }
    let t_points = summary.time_points();
    let mut warnings = Vec::new();

    let family = family_of(args.model);
    let uses_w0 = args.greg || args.model == ModelArg::Trim;
    let (points, variances, components): (Vec<f64>, Vec<f64>, Option<Vec<f64>>) = match family {
        None => {
            let kind = match args.model {
                ModelArg::Unw => DesignKind::Unw,
                ModelArg::Psm => DesignKind::Psm,
                _ => DesignKind::Trim,
            };
            let mut pts = Vec::new();
            let mut vars = Vec::new();
            for t in 1..=t_points {
                let (pt, var) = design_point(kind, &summary.at(t), &margins.at(t), args.common.w0)?;
                pts.push(pt);
                vars.push(var);
            }
            (pts, vars, None)
        }
        Some(family) => {
            let spec = ModelSpec {
                basis: basis_of(args.basis),
                knots: args.knots,
                trend_knots: args.time_knots,
                w0: args.common.w0,
                trend: true,
                ..ModelSpec::new(family)
            };
            let tfit = fit_trend_model(&summary, &spec, &FitOptions::default())?;
            if args.greg {
                let pi = trend_pseudo_inclusion(&summary, &margins, args.common.w0)?;
                let pts = trend_greg_estimates(tfit.fit.mu_cells(), &summary, &margins, &pi)?;
                for pt in &pts {
                    if !(0.0..=1.0).contains(pt) {
                        warnings.push(format!(
                            "GREG point estimate {pt} lies outside [0, 1]; reported as-is"
                        ));
                    }
                }
                let jk = JackknifeConfig {
                    groups: args.common.jackknife_groups,
                    seed: derive_seed(seed, domain::CLI, 1),
                };
                let vars =
                    greg_jackknife_variance(&tfit.fit, &summary, &margins, args.common.w0, &jk)?;
                (pts, vars, Some(tfit.fit.theta.clone()))
            } else {
                let pts = trend_estimates(tfit.fit.mu_cells(), &summary, &margins)?;
                let vars = match variance_method {
                    VarianceArg::Analytical => {
                        trend_variance_analytical(&tfit, &summary, &margins)?
                    }
                    VarianceArg::Bootstrap => {
                        let cfg = BootstrapConfig {
                            replicates: args.common.bootstrap_replicates,
                            seed: derive_seed(seed, domain::CLI, 2),
                        };
                        bootstrap_variance(&tfit.fit, &summary, &margins, &cfg)?.variance
                    }
                    VarianceArg::Jackknife => unreachable!("rejected above"),
                };
                let TrendFit { fit } = tfit;
                (pts, vars, Some(fit.theta))
            }
        }
    };

    let scale = match args.common.ci_scale {
        CiScaleArg::Logit => CiScale::Logit,
        CiScaleArg::Identity => CiScale::Identity,
    };
    let mut per_time = Vec::with_capacity(t_points);
    for t in 0..t_points {
        let (ci, fallback) =
            confidence_interval_with_fallback(points[t], variances[t], args.common.level, scale)?;
        per_time.push(TrendPoint {
            t: t + 1,
            point: points[t],
            variance: variances[t],
            ci_lo: ci.0,
            ci_hi: ci.1,
            ci_fallback: fallback,
        });
    }

    let manifest = Manifest {
        command: "trend".into(),
        version: env!("CARGO_PKG_VERSION"),
        seed,
        threads: args.common.threads,
        inputs: vec![digest_file(&args.sample)?, digest_file(&args.margins)?],
        config: serde_json::json!({
            "model": estimator_name(args.model, args.greg),
            "variance": variance_method,
            "w0": uses_w0.then_some(args.common.w0),
            "B": args.common.bootstrap_replicates,
            "G": args.common.jackknife_groups,
            "level": args.common.level,
            "basis": args.basis,
            "knots": args.knots,
            "time_knots": args.time_knots,
            "ci_scale": args.common.ci_scale,
        }),
        timing_ms: args
            .common
            .record_timing
            .then(|| started.elapsed().as_millis()),
    };
    let manifest_json = serde_json::to_string_pretty(&manifest).expect("serialize") + "\n";

    let mut csv = String::from("estimator,t,point,variance,ci_lo,ci_hi,level,variance_method\n");
    let name = estimator_name(args.model, args.greg);
    for tp in &per_time {
        csv.push_str(&format!(
            "{},{},{:e},{:e},{:e},{:e},{},{}\n",
            name,
            tp.t,
            tp.point,
            tp.variance,
            tp.ci_lo,
            tp.ci_hi,
            args.common.level,
            variance_label(variance_method),
        ));
    }
    let output = TrendOutput {
        estimator: name,
        variance_method,
        level: args.common.level,
        ci_scale: args.common.ci_scale,
        n: summary.total(),
        strata: summary.strata(),
        time_points: t_points,
        w0: uses_w0.then_some(args.common.w0),
        variance_components: components,
        per_time,
        warnings,
        manifest,
    };
    let prefix = args.common.out.unwrap_or_else(|| PathBuf::from("trend"));
    write_outputs(&prefix, &output, &csv, &manifest_json)
}

fn cmd_simulate(args: SimulateArgs) -> CliResult {
    init_threads(args.threads);
    let started = Instant::now();
    let raw = fs::read_to_string(&args.scenario)?;
    let mut de = serde_json::Deserializer::from_str(&raw);
    let cfg: ScenarioConfig = serde_path_to_error::deserialize(&mut de)
        .map_err(|e| CliError::Config(format!("scenario json at /{}: {}", e.path(), e.inner())))?;
    if cfg.population_size == PopulationSize::N1 && !args.full {
        return Err(CliError::Config(
            "large-population (N1) scenarios take a while; pass --full to run them".into(),
        ));
    }
    let table = run_scenario(&cfg)?;
    let manifest = Manifest {
        command: "simulate".into(),
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.seed,
        threads: args.threads,
        inputs: vec![digest_file(&args.scenario)?],
        config: serde_json::to_value(&cfg).expect("serialize"),
        timing_ms: args.record_timing.then(|| started.elapsed().as_millis()),
    };
    let manifest_json = serde_json::to_string_pretty(&manifest).expect("serialize") + "\n";

    let prefix = args.out.unwrap_or_else(|| PathBuf::from("simulate"));
    let csv_path = prefix.with_extension("csv");
    fs::write(&csv_path, table.to_csv())?;
    fs::write(manifest_path(&prefix), &manifest_json)?;
    eprintln!(
        "wrote {}, {}",
        csv_path.display(),
        manifest_path(&prefix).display()
    );
    Ok(())
}
