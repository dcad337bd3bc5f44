//! Sequential vs rayon timings for the data-parallel hot loops: per-sample
//! FOCUSS solves, scalp-map reduction scoring, TRAP-MUSIC localizer scans,
//! and whole campaigns. Build with `--no-default-features` to check the
//! sequential fallback compiles on its own; under the default `parallel`
//! feature both modes are measured side by side.

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use esl_core::bench::{campaign_sphere, run_campaign, CampaignConfig, SpaceSpec};
use esl_core::carss::{reduce_solution_space, CarssOptions};
use esl_core::headmodel::{generate_sphere_leadfield, normalize_columns, SphereSpec};
use esl_core::model::NoiseSpec;
use esl_core::parallel::Parallelism;
use esl_core::scanners::{estimate_signal_subspace, trap_music, TrapMusicOptions};
use esl_core::simulate::{sample_scenario, simulate_measurements, ErpSpec, TestCaseSpec};
use esl_core::solvers::{focuss_solve, AlphaRule, FocussOptions, SolverSpec};
use esl_core::{LeadField, Measurements};

fn modes() -> Vec<(&'static str, Parallelism)> {
    let mut m = vec![("sequential", Parallelism::Sequential)];
    #[cfg(feature = "parallel")]
    m.push(("rayon", Parallelism::Rayon));
    m
}

fn campaign_fixture() -> (LeadField, Measurements) {
    let lf = normalize_columns(&generate_sphere_leadfield(&campaign_sphere()).unwrap()).unwrap();
    let scenario = sample_scenario(
        &TestCaseSpec::three_shallow(),
        &lf.source_space,
        &ErpSpec::default(),
        30.0,
        30,
        NoiseSpec::none(),
        42,
    )
    .unwrap();
    let y = simulate_measurements(&lf, &scenario).unwrap();
    (lf, y)
}

fn bench_focuss(c: &mut Criterion) {
    let small = SphereSpec {
        head_radius_mm: 60.0,
        grid_spacing_mm: 22.0,
        n_electrodes: 16,
        ..Default::default()
    };
    let lf = normalize_columns(&generate_sphere_leadfield(&small).unwrap()).unwrap();
    let scenario = sample_scenario(
        &TestCaseSpec::single_source(),
        &lf.source_space,
        &ErpSpec::default(),
        30.0,
        30,
        NoiseSpec::none(),
        42,
    )
    .unwrap();
    let y = simulate_measurements(&lf, &scenario).unwrap();

    let mut group = c.benchmark_group("focuss_per_sample");
    for (name, mode) in modes() {
        let opts = FocussOptions {
            parallelism: mode,
            ..Default::default()
        };
        group.bench_function(name, |b| {
            b.iter(|| focuss_solve(black_box(&lf), black_box(&y), &opts).unwrap())
        });
    }
    group.finish();
}

fn bench_reduction(c: &mut Criterion) {
    let (lf, y) = campaign_fixture();
    let mut group = c.benchmark_group("carss_reduction");
    for (name, mode) in modes() {
        let opts = CarssOptions {
            parallelism: mode,
            ..Default::default()
        };
        group.bench_function(name, |b| {
            b.iter(|| reduce_solution_space(black_box(&lf), black_box(&y), &opts).unwrap())
        });
    }
    group.finish();
}

fn bench_trap_scan(c: &mut Criterion) {
    let (lf, y) = campaign_fixture();
    let subspace = estimate_signal_subspace(&y, Some(5)).unwrap();
    let mut group = c.benchmark_group("trap_music_scan");
    for (name, mode) in modes() {
        let opts = TrapMusicOptions {
            n_tilde_hint: Some(5),
            parallelism: mode,
            ..Default::default()
        };
        group.bench_function(name, |b| {
            b.iter(|| trap_music(black_box(&lf), black_box(&subspace), &opts).unwrap())
        });
    }
    group.finish();
}

fn bench_campaign(c: &mut Criterion) {
    let small = SphereSpec {
        head_radius_mm: 60.0,
        grid_spacing_mm: 22.0,
        n_electrodes: 16,
        ..Default::default()
    };
    let cfg = CampaignConfig {
        spaces: vec![SpaceSpec::new(small)],
        solvers: vec![SolverSpec::Sloreta {
            alpha: AlphaRule::Fixed(1e-9),
        }],
        test_cases: vec![TestCaseSpec::single_source()],
        noise_levels: vec![NoiseSpec::none()],
        trials: 8,
        seed: 42,
        ..Default::default()
    };
    let mut group = c.benchmark_group("campaign_trials");
    group.sample_size(10);
    for (name, mode) in modes() {
        group.bench_function(name, |b| {
            b.iter(|| run_campaign(black_box(&cfg), mode).unwrap())
        });
    }
    group.finish();
}

criterion_group!(
    benches,
    bench_focuss,
    bench_reduction,
    bench_trap_scan,
    bench_campaign
);
criterion_main!(benches);
