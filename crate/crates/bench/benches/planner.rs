use criterion::{criterion_group, criterion_main, Criterion};
use gaitopt_bench::{context, dense_qp, icp_plan, walk};
use gaitopt_core::com::com_at_touchdown;
use gaitopt_core::icp::build_icp_plan;
use gaitopt_core::qp::solve;
use gaitopt_core::timing::{optimize_timing, touchdown_jacobian, CostWeights, LoopConfig};
use std::hint::black_box;

fn plan(c: &mut Criterion) {
    let (footsteps, timings, params) = walk(0.4);
    c.bench_function("build_icp_plan", |b| {
        b.iter(|| build_icp_plan(black_box(&footsteps), black_box(&timings), params.omega()).unwrap())
    });
    let icp = icp_plan(0.4);
    let x0 = icp.initial_icp();
    c.bench_function("com_at_touchdown", |b| b.iter(|| com_at_touchdown(black_box(&icp), x0, 1).unwrap()));
}

fn gradient(c: &mut Criterion) {
    let ctx = context(0.6, 0.3);
    let t = ctx.timing_vector();
    c.bench_function("touchdown_jacobian", |b| b.iter(|| touchdown_jacobian(black_box(&ctx), &t, 1e-4).unwrap()));
}

fn qp(c: &mut Criterion) {
    let qp = dense_qp(6, 12);
    c.bench_function("qp_6x12", |b| b.iter(|| solve(black_box(&qp)).unwrap()));
}

fn optimizer(c: &mut Criterion) {
    let weights = CostWeights::default();
    let config = LoopConfig::default();
    for (l, th) in [(0.4, 0.4), (0.6, 0.3)] {
        let ctx = context(l, th);
        c.bench_function(&format!("optimize_timing_{l}_{th}"), |b| {
            b.iter(|| optimize_timing(black_box(&ctx), &weights, &config).unwrap())
        });
    }
}

criterion_group!(benches, plan, gradient, qp, optimizer);
criterion_main!(benches);
