use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use nrss_core::harness::{synthesize, synthetic_samples, SyntheticSpec};
use nrss_core::net::{backward, batch_gradient, forward, NetConfig, NetworkParams, Targets};

fn network(c: &mut Criterion) {
    let images = synthesize(&SyntheticSpec {
        n_images: 4,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let samples = synthetic_samples(&images);
    let config = NetConfig::default();
    let params = NetworkParams::<f32>::init(config, 0).unwrap();
    let targets: Vec<Targets<f32>> = samples
        .iter()
        .map(|s| Targets::build(&config, &s.stack, &s.saliency, 1.0).unwrap())
        .collect();
    let batch: Vec<_> = samples.iter().map(|s| &s.image).zip(&targets).collect();
    let (image, targets) = batch[0];
    let lambdas = vec![1.0; config.n_refinements() + 1];

    c.bench_function("forward 64x64", |b| {
        b.iter(|| forward(black_box(&params), image).unwrap())
    });
    c.bench_function("forward+backward 64x64", |b| {
        b.iter(|| {
            let trace = forward(black_box(&params), image).unwrap();
            backward(&params, &trace, targets, &lambdas).unwrap()
        })
    });
    c.bench_function("batch_gradient 4x64x64", |b| {
        b.iter(|| batch_gradient(black_box(&params), &batch, &lambdas).unwrap())
    });
}

criterion_group!(benches, network);
criterion_main!(benches);
