use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use robust_precoding::conic::{solve, Tolerances};
use robust_precoding::design::{certify, solve_max_delta, solve_power_min_with, DesignOptions};
use robust_precoding::reformulation::{build_robust_exact, IntersectionMode};
use robust_precoding::thp::{simulate, ConstellationSpec};
use robust_precoding::uncertainty::OracleConfig;
use robust_precoding::PrecodingMode;
use robust_precoding_bench::instance;

fn uncertified() -> DesignOptions {
    DesignOptions {
        intersection: IntersectionMode::Exact,
        certify: false,
        ..DesignOptions::default()
    }
}

fn formulation(c: &mut Criterion) {
    let mut g = c.benchmark_group("build_robust_exact");
    for k in [2, 3, 4, 6] {
        let data = instance(7, k, k, 0.05, 6.0, PrecodingMode::Thp);
        g.bench_with_input(BenchmarkId::from_parameter(k), &data, |b, d| {
            b.iter(|| build_robust_exact(black_box(d)).unwrap())
        });
    }
    g.finish();
}

fn power_min(c: &mut Criterion) {
    let mut g = c.benchmark_group("solve_power_min");
    g.sample_size(20);
    for k in [2, 3, 4] {
        for mode in [PrecodingMode::Linear, PrecodingMode::Thp] {
            let data = instance(7, k, k, 0.05, 6.0, mode);
            let f = build_robust_exact(&data).unwrap();
            g.bench_function(BenchmarkId::new(format!("{mode:?}").to_lowercase(), k), |b| {
                b.iter(|| solve(black_box(&f.program), &Tolerances::default()))
            });
        }
    }
    g.finish();
}

fn oracle(c: &mut Criterion) {
    let data = instance(7, 3, 3, 0.05, 6.0, PrecodingMode::Thp);
    let design = solve_power_min_with(&data, &uncertified()).unwrap().design.unwrap();
    let mut g = c.benchmark_group("certify");
    g.sample_size(10);
    for samples in [1_000, 10_000] {
        let cfg = OracleConfig {
            samples,
            ..OracleConfig::default()
        };
        g.bench_with_input(BenchmarkId::from_parameter(samples), &cfg, |b, cfg| {
            b.iter(|| certify(black_box(&design), &data, cfg))
        });
    }
    g.finish();
}

fn bisection(c: &mut Criterion) {
    let data = instance(7, 3, 3, 0.0, 6.0, PrecodingMode::Linear);
    let mut g = c.benchmark_group("max_delta");
    g.sample_size(10);
    g.bench_function("linear_3x3", |b| b.iter(|| solve_max_delta(black_box(&data)).unwrap()));
    g.finish();
}

fn simulator(c: &mut Criterion) {
    let data = instance(7, 3, 3, 0.05, 6.0, PrecodingMode::Thp);
    let design = solve_power_min_with(&data, &uncertified()).unwrap().design.unwrap();
    let h = data.ordered().estimates().clone();
    let qam = ConstellationSpec::qam(64).unwrap();
    let mut g = c.benchmark_group("simulate");
    g.sample_size(10);
    g.bench_function("qam64_3x3_1e5", |b| {
        b.iter(|| simulate(black_box(&design), &h, &[1.0; 3], 100_000, qam, 1).unwrap())
    });
    g.finish();
}

criterion_group!(benches, formulation, power_min, oracle, bisection, simulator);
criterion_main!(benches);
