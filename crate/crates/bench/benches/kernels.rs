//! Hot-kernel benchmarks: metric refreshes, the trace-kernel gradients, and
//! single generalized-leapfrog steps across the metric family.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use nalgebra::DMatrix;
use rmhmc::integrate::{gen_leapfrog_step, IntegratorConfig, PhaseState};
use rmhmc::metrics::{MetricConfig, MetricFamily, System};
use rmhmc::spectral::{sym_eigen, SoftAbsPieces};
use rmhmc::targets::{Funnel, Target};
use rmhmc_bench::{funnel_point, state_with_momentum};

fn bench_eigendecomposition(c: &mut Criterion) {
    let mut group = c.benchmark_group("sym_eigen");
    for &n in &[11usize, 32] {
        let funnel = Funnel::new(n - 1);
        let h = funnel.hessian(&funnel_point(n, 1)).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n), &h, |b, h| {
            b.iter(|| sym_eigen(black_box(h)).unwrap())
        });
    }
    group.finish();
}

fn bench_softabs_pieces(c: &mut Criterion) {
    let mut group = c.benchmark_group("softabs_pieces");
    for &n in &[11usize, 32] {
        let funnel = Funnel::new(n - 1);
        let h: DMatrix<f64> = funnel.hessian(&funnel_point(n, 2)).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n), &h, |b, h| {
            b.iter(|| SoftAbsPieces::new(black_box(h), 1e6).unwrap())
        });
    }
    group.finish();
}

fn bench_refresh(c: &mut Criterion) {
    let mut group = c.benchmark_group("refresh_n11");
    let funnel = Funnel::new(10);
    let q = funnel_point(11, 3);
    for family in [
        MetricFamily::Euclidean,
        MetricFamily::SoftAbs,
        MetricFamily::DiagSoftAbs,
        MetricFamily::OuterSoftAbs,
        MetricFamily::DiagOuterSoftAbs,
    ] {
        let cfg = MetricConfig::new(family, if family.is_riemannian() { 1e6 } else { 1.0 });
        group.bench_function(family.as_str(), |b| {
            b.iter(|| cfg.refresh(&funnel, black_box(&q)).unwrap())
        });
    }
    group.finish();
}

fn bench_gradients(c: &mut Criterion) {
    let mut group = c.benchmark_group("softabs_gradients_n11");
    let funnel = Funnel::new(10);
    let cfg = MetricConfig::softabs(1e6);
    let (st, p) = state_with_momentum(&funnel, &cfg, 4);
    group.bench_function("dtau_dq", |b| b.iter(|| st.dtau_dq(black_box(&p))));
    group.bench_function("dphi_dq", |b| b.iter(|| st.dphi_dq()));
    group.bench_function("dtau_dp", |b| b.iter(|| st.dtau_dp(black_box(&p))));
    group.finish();
}

fn bench_leapfrog_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("gen_leapfrog_step_n11");
    group.sample_size(40);
    let funnel = Funnel::new(10);
    for family in [
        MetricFamily::SoftAbs,
        MetricFamily::DiagSoftAbs,
        MetricFamily::DiagOuterSoftAbs,
    ] {
        let alpha = if family == MetricFamily::SoftAbs || family == MetricFamily::DiagSoftAbs {
            1e6
        } else {
            1.0
        };
        let cfg = MetricConfig::new(family, alpha);
        let sys = System::new(&funnel, cfg.clone());
        let (st, p) = state_with_momentum(&funnel, &cfg, 5);
        let state = PhaseState::new(st.position().clone(), p);
        let icfg = IntegratorConfig::new(0.02, 1);
        group.bench_function(family.as_str(), |b| {
            b.iter(|| gen_leapfrog_step(&sys, black_box(&state), &icfg).unwrap())
        });
    }
    group.finish();
}

criterion_group!(
    benches,
    bench_eigendecomposition,
    bench_softabs_pieces,
    bench_refresh,
    bench_gradients,
    bench_leapfrog_step
);
criterion_main!(benches);
