use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use darkir_core::autodiff::Tape;
use darkir_core::model::{DarkIr, DarkIrConfig};
use darkir_core::nn::{Builder, EBlock, ParamStore};
use darkir_core::tensor::{conv2d, irfft2, rfft2};
use darkir_core::{ConvSpec, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rand(shape: &[usize], seed: u64) -> Tensor<f32> {
    Tensor::rand_uniform(shape, -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn input(c: usize, hw: usize, seed: u64) -> Tensor<f32> {
    rand(&[1, c, hw, hw], seed)
}

fn convolutions(c: &mut Criterion) {
    let x = input(16, 64, 0);
    let dense = rand(&[16, 16, 3, 3], 1);
    let depthwise = rand(&[16, 1, 3, 3], 2);
    let pointwise = rand(&[32, 16, 1, 1], 3);
    c.bench_function("conv2d dense 3x3 16ch 64x64", |b| {
        b.iter(|| conv2d(black_box(&x), &dense, None, &ConvSpec::same(3, 1, 1)).unwrap())
    });
    c.bench_function("conv2d depthwise 3x3 dil4 16ch 64x64", |b| {
        b.iter(|| conv2d(black_box(&x), &depthwise, None, &ConvSpec::same(3, 4, 16)).unwrap())
    });
    c.bench_function("conv2d pointwise 16->32 64x64", |b| {
        b.iter(|| conv2d(black_box(&x), &pointwise, None, &ConvSpec::pointwise()).unwrap())
    });
}

fn fft(c: &mut Criterion) {
    let x = input(16, 64, 4);
    c.bench_function("rfft2+irfft2 16ch 64x64", |b| {
        b.iter(|| irfft2(&rfft2(black_box(&x)).unwrap()).unwrap())
    });
}

fn eblock(c: &mut Criterion) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let block = EBlock::build(&mut Builder::new(&mut store, &mut rng), 16, false);
    let x = input(16, 32, 6);
    c.bench_function("eblock forward+backward 16ch 32x32", |b| {
        b.iter(|| {
            let tape = Tape::new();
            let z = tape.constant(x.clone());
            let out = block.forward(&store, &tape, z).unwrap();
            let loss = tape.mean_abs(out).unwrap();
            tape.backward(loss).unwrap()
        })
    });
}

fn network(c: &mut Criterion) {
    let net = DarkIr::<f32>::build(&DarkIrConfig::tiny(), 0).unwrap();
    let y = input(3, 64, 7).map(|v| 0.5 + 0.5 * v);
    c.bench_function("darkir tiny infer 64x64", |b| b.iter(|| net.infer(black_box(&y)).unwrap()));
}

criterion_group!(benches, convolutions, fft, eblock, network);
criterion_main!(benches);
