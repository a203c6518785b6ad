use criterion::{black_box, criterion_group, criterion_main, Criterion};
use microyolo_bench::{image, samples};
use microyolo_core::prelude::*;
use microyolo_core::train::calibrate;

fn inference(c: &mut Criterion) {
    let net = Network::init(ModelConfig::reference_single_class(), 1);
    let scales = calibrate(&net, &net.weight_scales(), &samples(8)).unwrap();
    let int8 = QuantizedModel::from_network(&net, &scales).unwrap();
    let x = image(99);
    let mut group = c.benchmark_group("ref-88");
    group.bench_function("float", |b| b.iter(|| net.forward(black_box(&x), Precision::Float).unwrap()));
    group.bench_function("int8", |b| b.iter(|| int8.forward(black_box(&x)).unwrap()));
    group.finish();
}

criterion_group!(benches, inference);
criterion_main!(benches);
