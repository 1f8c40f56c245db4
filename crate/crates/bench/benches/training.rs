use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use featlab::model::Evaluation;
use featlab::optim::{Algorithm, Optimizer};
use featlab::probes;
use featlab::OptimConfig;
use featlab_bench::preset_problem;

fn gradient_pass(c: &mut Criterion) {
    let (ds, model, w) = preset_problem(7);
    c.bench_function("forward+gradient (n=200, d=1000, m=20)", |b| {
        b.iter(|| {
            let eval = Evaluation::new(black_box(&w), &ds, model.q).unwrap();
            black_box(eval.gradient(&w, &ds, model.lambda))
        })
    });
}

fn optimizer_steps(c: &mut Criterion) {
    let (ds, model, w) = preset_problem(7);
    let g = Evaluation::new(&w, &ds, model.q)
        .unwrap()
        .gradient(&w, &ds, model.lambda);
    let mut group = c.benchmark_group("step");
    for alg in [Algorithm::Gd, Algorithm::Adam, Algorithm::SignGd] {
        let mut opt = Optimizer::new(OptimConfig::new(alg, 1e-6), w.as_slice().len());
        let mut x = w.clone();
        group.bench_function(alg.to_string(), |b| {
            b.iter(|| opt.step(x.as_mut_slice(), black_box(g.as_slice())))
        });
    }
    group.finish();
}

fn probe_record(c: &mut Criterion) {
    let (ds, _, w) = preset_problem(7);
    c.bench_function("noise memorization (max mode)", |b| {
        b.iter(|| probes::noise_memorization(black_box(&w), &ds, featlab::Label::Pos, probes::Aggregate::Max).unwrap())
    });
}

criterion_group!(benches, gradient_pass, optimizer_steps, probe_record);
criterion_main!(benches);
