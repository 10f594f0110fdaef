use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use svysmooth::basis::{place_knots, thin_plate_basis};
use svysmooth::glmm::{fit_model, Family, FitOptions, ModelSpec};
use svysmooth::resample::{bootstrap_variance, greg_jackknife_variance};
use svysmooth::rng::{domain, stream_rng};
use svysmooth::sim::{draw_sample, gen_population, sample_sizes, PopulationModel, PopulationSize};
use svysmooth::trend::fit_trend_model;
use svysmooth::{BootstrapConfig, JackknifeConfig};

fn bench_basis(c: &mut Criterion) {
    let x: Vec<f64> = (1..=18).map(f64::from).collect();
    let knots = place_knots(&x, 18).unwrap();
    c.bench_function("thin_plate_basis_18", |b| {
        b.iter(|| thin_plate_basis(black_box(&x), black_box(&knots)).unwrap())
    });
}

fn bench_fits(c: &mut Criterion) {
    let mut rng = stream_rng(1, domain::POPULATION, 0);
    let pop = gen_population(PopulationModel::Quad0, PopulationSize::N1, &mut rng).unwrap();
    let row = sample_sizes(PopulationSize::N1, 5_000).unwrap();
    let mut srng = stream_rng(1, domain::SAMPLE, 0);
    let summary = draw_sample(&pop, &row, &mut srng).unwrap();

    for family in [Family::Xre, Family::Lin, Family::Npar] {
        let spec = ModelSpec::new(family);
        c.bench_function(&format!("pql_fit_{family:?}"), |b| {
            b.iter(|| {
                fit_model(
                    black_box(&spec),
                    black_box(&summary),
                    &FitOptions::default(),
                )
            })
        });
    }

    let fit = fit_model(
        &ModelSpec::new(Family::Npar),
        &summary,
        &FitOptions::default(),
    )
    .unwrap();
    c.bench_function("pql_fit_npar_warm", |b| {
        b.iter(|| {
            fit_model(
                &ModelSpec::new(Family::Npar),
                &summary,
                &FitOptions::warm_from(&fit),
            )
        })
    });

    let mut group = c.benchmark_group("resampling");
    group.sample_size(10);
    group.bench_function("bootstrap_B25", |b| {
        b.iter(|| {
            let cfg = BootstrapConfig {
                replicates: 25,
                seed: 7,
            };
            bootstrap_variance(&fit, &summary, &pop.margins, &cfg).unwrap()
        })
    });
    group.bench_function("greg_jackknife_G50", |b| {
        b.iter(|| {
            let cfg = JackknifeConfig {
                groups: 50,
                seed: 7,
            };
            greg_jackknife_variance(&fit, &summary, &pop.margins, 3.0, &cfg).unwrap()
        })
    });
    group.finish();
}

fn bench_trend(c: &mut Criterion) {
    let mut rng = stream_rng(2, domain::POPULATION, 0);
    let pop = gen_population(PopulationModel::F2, PopulationSize::N2, &mut rng).unwrap();
    let row = sample_sizes(PopulationSize::N2, 2_500).unwrap();
    let mut srng = stream_rng(2, domain::SAMPLE, 0);
    let summary = draw_sample(&pop, &row, &mut srng).unwrap();
    let spec = ModelSpec {
        trend_knots: Some(30),
        ..ModelSpec::new(Family::Npar)
    };

    let mut group = c.benchmark_group("trend");
    group.sample_size(20);
    group.bench_function("trend_fit_npar", |b| {
        b.iter(|| fit_trend_model(black_box(&summary), &spec, &FitOptions::default()).unwrap())
    });
    group.finish();
}

criterion_group!(benches, bench_basis, bench_fits, bench_trend);
criterion_main!(benches);
