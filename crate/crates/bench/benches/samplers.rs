use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use subgrad_langevin::estimation::histogram;
use subgrad_langevin::metrics::{discretize_target, w2_exact};
use subgrad_langevin::samplers::{InnerSolver, RngNoise, Stepper};
use subgrad_langevin::{Grid2D, Image, Model};

fn steps_2d(c: &mut Criterion) {
    let model = Model::tv_l2_2d([-1.0, 1.0], 1.0, 5.0).unwrap();
    let mut g = c.benchmark_group("step_2d");
    let mut stepper = Stepper::new(&model);
    let mut noise = RngNoise::for_chain(1, 0);
    let mut x = [0.3, -0.2];
    g.bench_function("prox_sub", |b| b.iter(|| stepper.prox_sub(black_box(&mut x), 1e-3, 1e-3, &mut noise).unwrap()));
    g.bench_function("grad_sub", |b| b.iter(|| stepper.grad_sub(black_box(&mut x), 1e-3, 1e-3, &mut noise).unwrap()));
    let inner = InnerSolver::default();
    g.bench_function("myula", |b| b.iter(|| stepper.myula(black_box(&mut x), 1e-3, 0.01, inner, &mut noise).unwrap()));
    g.bench_function("pmala", |b| b.iter(|| stepper.pmala(black_box(&mut x), 1e-3, inner, &mut noise).unwrap()));
    g.finish();
}

fn steps_image(c: &mut Criterion) {
    let y = Image::from_fn(64, 64, |i, j| if (16..48).contains(&i) && (16..48).contains(&j) { 0.8 } else { 0.2 });
    let model = Model::tv_denoise(y.clone(), 0.05, 30.0).unwrap();
    let mut g = c.benchmark_group("step_64x64_denoise");
    let mut stepper = Stepper::new(&model);
    let mut noise = RngNoise::for_chain(1, 0);
    let mut x = y.into_data();
    g.bench_function("prox_sub", |b| b.iter(|| stepper.prox_sub(black_box(&mut x), 1e-5, 1e-5, &mut noise).unwrap()));
    g.bench_function("grad_sub", |b| b.iter(|| stepper.grad_sub(black_box(&mut x), 1e-5, 1e-5, &mut noise).unwrap()));
    g.finish();
}

fn metrics(c: &mut Criterion) {
    let grid = Grid2D::default_2d();
    let model = Model::tv_l2_2d([-1.0, 1.0], 1.0, 5.0).unwrap();
    let target = discretize_target(|p| model.eval_u(&p), &grid, 8).unwrap().distribution;
    let mut g = c.benchmark_group("metrics");
    g.sample_size(10);
    g.bench_function("discretize_target_50x50_refine8", |b| {
        b.iter(|| discretize_target(|p| model.eval_u(&p), black_box(&grid), 8).unwrap())
    });
    let mut noise = RngNoise::for_chain(2, 0);
    let mut stepper = Stepper::new(&model);
    let mut samples = Vec::new();
    for _ in 0..10_000 {
        let mut x = [0.0, 0.0];
        for _ in 0..200 {
            stepper.grad_sub(&mut x, 1e-2, 1e-2, &mut noise).unwrap();
        }
        samples.extend_from_slice(&x);
    }
    let empirical = histogram(&samples, &grid).unwrap().distribution;
    g.bench_function("w2_exact_50x50", |b| {
        b.iter_batched(|| empirical.clone(), |e| w2_exact(&e, &target).unwrap(), BatchSize::SmallInput)
    });
    g.finish();
}

criterion_group!(benches, steps_2d, steps_image, metrics);
criterion_main!(benches);
