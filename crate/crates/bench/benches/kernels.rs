use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mcgan_core::cgan::{discriminator_step, generator_step, GanOptimizers};
use mcgan_core::datasets::{make_toy_splits, ToyConfig};
use mcgan_core::density::{eval_on_grid, KdeModel};
use mcgan_core::dynsim::{frf, ChainSystem, FrequencyGrid};
use mcgan_core::nnet::AdamConfig;
use mcgan_core::{Activation, EvalGrid, GanPair, Matrix, Mlp};

fn mlp(c: &mut Criterion) {
    let net = Mlp::new(
        &[3, 64, 64, 2],
        &[Activation::Tanh, Activation::Tanh, Activation::Identity],
        1,
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = Matrix::from_fn(64, 3, |_, _| rng.random_range(-1.0..1.0));
    let upstream = Matrix::from_element(64, 2, 0.1);
    c.bench_function("mlp forward 64x(3-64-64-2)", |b| {
        b.iter(|| net.predict(black_box(&x)).unwrap())
    });
    c.bench_function("mlp forward+backward 64x(3-64-64-2)", |b| {
        b.iter(|| {
            let (_, cache) = net.forward(black_box(&x)).unwrap();
            net.backward_full(&cache, &upstream).unwrap()
        })
    });
}

fn kde(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let points = Matrix::from_fn(1000, 2, |_, _| rng.random_range(-1.0..1.0));
    let model = KdeModel::fit(points, 0.2).unwrap();
    let grid = EvalGrid::default_for_dim(2).unwrap();
    c.bench_function("kde eval_on_grid 1000 pts 2-D", |b| {
        b.iter(|| eval_on_grid(black_box(&model), &grid).unwrap())
    });
}

fn dynamics(c: &mut Criterion) {
    let sys = ChainSystem::baseline();
    let grid = FrequencyGrid::default_grid();
    c.bench_function("frf 6-DOF default grid", |b| {
        b.iter(|| frf(black_box(&sys), &grid, 0).unwrap())
    });
}

fn training(c: &mut Criterion) {
    let data = make_toy_splits(&ToyConfig::default()).unwrap();
    let train = data.conditioned().unwrap().train;
    let batch = train.select(&(0..64).collect::<Vec<_>>());
    let mut pair = GanPair::new(2, 1, 2, 64, 7).unwrap();
    let mut opt = GanOptimizers::new(&pair, AdamConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    c.bench_function("gan D+G step batch 64 width 64", |b| {
        b.iter(|| {
            discriminator_step(&mut pair, &batch, &mut rng, &mut opt).unwrap();
            generator_step(&mut pair, &batch.codes, &mut rng, &mut opt).unwrap()
        })
    });
}

criterion_group!(benches, mlp, kde, dynamics, training);
criterion_main!(benches);
