use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use microyolo_bench::pseudo;
use microyolo_core::eval::average_precision;
use microyolo_core::head::{encode_targets, yolo_loss};
use microyolo_core::ops::{conv2d_backward, conv2d_forward, ConvWeights};
use microyolo_core::prelude::*;
use microyolo_core::quant::{choose_scale, qconv2d_int8, QuantizedLayer, QuantizedTensor};

fn conv(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv3x3");
    // (in, out, side) of the reference backbone's layers
    for (ci, co, side) in [(3, 16, 88), (16, 32, 44), (32, 64, 22), (64, 64, 11)] {
        let w = ConvWeights::new(co, ci, pseudo(co * ci * 9, 1, 0.2), pseudo(co, 2, 0.1)).unwrap();
        let x = Tensor::new(vec![ci, side, side], pseudo(ci * side * side, 3, 1.0)).unwrap();
        let id = format!("{ci}x{co}@{side}");
        group.bench_with_input(BenchmarkId::new("forward", &id), &x, |b, x| b.iter(|| conv2d_forward(black_box(x), &w).unwrap()));
        let y = conv2d_forward(&x, &w).unwrap();
        group.bench_with_input(BenchmarkId::new("backward", &id), &x, |b, x| {
            b.iter(|| conv2d_backward(black_box(&y), black_box(x), &w).unwrap())
        });
        let (qi, qw) = (choose_scale(x.data()), choose_scale(&w.weight));
        let qo = choose_scale(y.data());
        let layer = QuantizedLayer::conv(&w, qi, qw, qo, true).unwrap();
        let qx = QuantizedTensor::quantize(&x, qi);
        group.bench_with_input(BenchmarkId::new("int8", &id), &qx, |b, qx| b.iter(|| qconv2d_int8(black_box(qx), &layer).unwrap()));
    }
    group.finish();
}

fn loss(c: &mut Criterion) {
    let head = ModelConfig::reference_single_class().head();
    let boxes = vec![
        GroundTruth {
            bbox: BBox::new(0.3, 0.4, 0.2, 0.25).unwrap(),
            class_id: 0,
        },
        GroundTruth {
            bbox: BBox::new(0.7, 0.6, 0.3, 0.2).unwrap(),
            class_id: 0,
        },
    ];
    let target = encode_targets(&boxes, head.grid, head.classes);
    let pred: Vec<f32> = pseudo(head.output_len(), 4, 0.5).into_iter().map(|v| v + 0.5).collect();
    c.bench_function("yolo_loss", |b| {
        b.iter(|| yolo_loss(black_box(&pred), &target, head, LossWeights::default()).unwrap())
    });
}

fn ap(c: &mut Criterion) {
    let mut group = c.benchmark_group("average_precision");
    for n in [100usize, 10_000] {
        let scores = pseudo(n, 5, 1.0);
        let tp: Vec<bool> = pseudo(n, 6, 1.0).iter().map(|&v| v > 0.0).collect();
        for method in [ApMethod::AllPoint, ApMethod::ElevenPoint] {
            group.bench_function(BenchmarkId::new(format!("{method:?}"), n), |b| {
                b.iter(|| average_precision(black_box(&tp), black_box(&scores), n / 2, method))
            });
        }
    }
    group.finish();
}

criterion_group!(benches, conv, loss, ap);
criterion_main!(benches);
