use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use rdthreshold::forward::{step, Scheme};
use rdthreshold::steady::{ground_state, principal_eigenpair, refine_discrete};
use rdthreshold_bench::{cn_matrix, fixture};

fn thomas(c: &mut Criterion) {
    let m = 1599;
    let a = cn_matrix(m, 0.05, 0.005);
    let rhs: Vec<f64> = (0..m).map(|i| (i as f64 * 0.01).sin()).collect();
    let mut scratch = Vec::new();
    c.bench_function("thomas_1599", |b| {
        b.iter_batched_ref(
            || rhs.clone(),
            |r| a.solve_in_place(r, &mut scratch).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

fn imex_step(c: &mut Criterion) {
    let fx = fixture(1601);
    c.bench_function("imex_cn_step_1601", |b| {
        b.iter(|| step(&fx.nl, black_box(&fx.block), 0.005, Scheme::ImexCn).unwrap())
    });
}

fn steady_state(c: &mut Criterion) {
    let fx = fixture(1601);
    c.bench_function("ground_state_quadrature_1601", |b| {
        b.iter(|| ground_state(&fx.nl, black_box(&fx.grid)).unwrap())
    });
    let gs = ground_state(&fx.nl, &fx.grid).unwrap();
    c.bench_function("ground_state_newton_1601", |b| {
        b.iter(|| refine_discrete(&fx.nl, black_box(&gs.w)).unwrap())
    });
    c.bench_function("principal_eigenpair_1601", |b| {
        b.iter(|| principal_eigenpair(&fx.nl, black_box(&fx.w)).unwrap())
    });
}

criterion_group!(benches, thomas, imex_step, steady_state);
criterion_main!(benches);
