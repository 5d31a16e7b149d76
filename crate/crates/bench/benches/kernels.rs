use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use petreg::predictor::predict;
use petreg::{expm, load_preset, max_sampling_bound, run};
use petreg_bench::{dense, predict_fixture, rotation, short_preset};

fn bench_expm(c: &mut Criterion) {
    let mut g = c.benchmark_group("expm");
    g.bench_function("rotation_h", |b| {
        let s = rotation();
        b.iter(|| expm(black_box(&s), black_box(0.001)).unwrap())
    });
    for n in [3, 8] {
        let a = dense(n, 0.5);
        g.bench_with_input(BenchmarkId::new("dense", n), &a, |b, a| {
            b.iter(|| expm(black_box(a), 1.0).unwrap())
        });
    }
    g.finish();
}

fn bench_predict(c: &mut Criterion) {
    let mut g = c.benchmark_group("predict");
    for nx in [50, 200] {
        let f = predict_fixture(nx);
        g.bench_with_input(BenchmarkId::from_parameter(nx), &f, |b, f| {
            b.iter(|| {
                predict(
                    &f.model,
                    black_box(&f.x_hat),
                    &f.v_hat,
                    &f.s_hat,
                    &f.hist,
                    &f.cfg,
                    f.t,
                )
                .unwrap()
            })
        });
    }
    g.finish();
}

fn bench_bound(c: &mut Criterion) {
    let graph = load_preset("s1_no_mismatch").unwrap().1.graph;
    c.bench_function("sampling_bound", |b| {
        b.iter(|| max_sampling_bound(black_box(&graph), 2).unwrap())
    });
}

fn bench_engine(c: &mut Criterion) {
    let mut g = c.benchmark_group("engine_0.1s");
    g.sample_size(10);
    for (name, diag) in [
        ("s1_no_mismatch", false),
        ("s1_no_mismatch", true),
        ("s4_petm_b", false),
    ] {
        let sc = short_preset(name, 0.1, diag);
        let id = if diag {
            format!("{name}+diagnostics")
        } else {
            name.to_string()
        };
        g.bench_function(id, |b| b.iter(|| run(black_box(&sc)).unwrap()));
    }
    g.finish();
}

criterion_group!(
    benches,
    bench_expm,
    bench_predict,
    bench_bound,
    bench_engine
);
criterion_main!(benches);
