//! Central finite differences against analytic backward passes. Each check
//! draws a random small instance and returns the norm-wise relative error
//! `|fd - analytic| / max(|fd|, |analytic|)`.

use microyolo_core::config::HeadSpec;
use microyolo_core::head::{encode_targets, yolo_loss, BBox, GroundTruth, LossWeights};
use microyolo_core::ops::*;
use microyolo_core::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn rel_error(fd: &[f64], an: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = fd.iter().zip(an).map(|(a, b)| a - b).collect();
    let scale = norm(fd).max(norm(an));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f32, hi: f32) -> Vec<f32> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// `sum(r * y)` in f64.
fn project(y: &[f32], r: &[f32]) -> f64 {
    y.iter().zip(r).map(|(&a, &b)| a as f64 * b as f64).sum()
}

/// Central difference of `f` along every coordinate of `x`. The step is
/// measured after rounding to f32 so it is exact.
fn numeric(x: &[f32], eps: f32, mut f: impl FnMut(&[f32]) -> f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + eps;
            let (up, hi) = (f(&x), x[i] as f64);
            x[i] = orig - eps;
            let (down, lo) = (f(&x), x[i] as f64);
            x[i] = orig;
            (up - down) / (hi - lo)
        })
        .collect()
}

fn widen(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

pub fn conv_instance(rng: &mut ChaCha8Rng) -> f64 {
    let (ci, co) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
    let (h, w) = (rng.gen_range(1..=6), rng.gen_range(1..=6));
    let x = uniform(rng, ci * h * w, -1.0, 1.0);
    let wt = ConvWeights::new(co, ci, uniform(rng, co * ci * 9, -1.0, 1.0), uniform(rng, co, -1.0, 1.0)).unwrap();
    let r = uniform(rng, co * h * w, -1.0, 1.0);
    let input = Tensor::new(vec![ci, h, w], x.clone()).unwrap();
    let g = conv2d_backward(&Tensor::new(vec![co, h, w], r.clone()).unwrap(), &input, &wt).unwrap();

    let eps = 1e-2;
    let fd_x = numeric(&x, eps, |x| {
        project(conv2d_forward(&Tensor::new(vec![ci, h, w], x.to_vec()).unwrap(), &wt).unwrap().data(), &r)
    });
    let fd_w = numeric(&wt.weight, eps, |v| {
        let w2 = ConvWeights::new(co, ci, v.to_vec(), wt.bias.clone()).unwrap();
        project(conv2d_forward(&input, &w2).unwrap().data(), &r)
    });
    let fd_b = numeric(&wt.bias, eps, |v| {
        let w2 = ConvWeights::new(co, ci, wt.weight.clone(), v.to_vec()).unwrap();
        project(conv2d_forward(&input, &w2).unwrap().data(), &r)
    });
    let fd: Vec<f64> = [fd_x, fd_w, fd_b].concat();
    let an: Vec<f64> = [widen(g.input.data()), widen(&g.weight), widen(&g.bias)].concat();
    rel_error(&fd, &an)
}

pub fn fc_instance(rng: &mut ChaCha8Rng) -> f64 {
    let (n_in, n_out) = (rng.gen_range(1..=12), rng.gen_range(1..=12));
    let x = uniform(rng, n_in, -1.0, 1.0);
    let wt = FcWeights::new(n_out, n_in, uniform(rng, n_in * n_out, -1.0, 1.0), uniform(rng, n_out, -1.0, 1.0)).unwrap();
    let r = uniform(rng, n_out, -1.0, 1.0);
    let input = Tensor::new(vec![n_in], x.clone()).unwrap();
    let g = fc_backward(&Tensor::new(vec![n_out], r.clone()).unwrap(), &input, &wt).unwrap();

    let eps = 1e-2;
    let fd_x = numeric(&x, eps, |x| project(fc_forward(&Tensor::new(vec![n_in], x.to_vec()).unwrap(), &wt).unwrap().data(), &r));
    let fd_w = numeric(&wt.weight, eps, |v| {
        let w2 = FcWeights::new(n_out, n_in, v.to_vec(), wt.bias.clone()).unwrap();
        project(fc_forward(&input, &w2).unwrap().data(), &r)
    });
    let fd_b = numeric(&wt.bias, eps, |v| {
        let w2 = FcWeights::new(n_out, n_in, wt.weight.clone(), v.to_vec()).unwrap();
        project(fc_forward(&input, &w2).unwrap().data(), &r)
    });
    let fd: Vec<f64> = [fd_x, fd_w, fd_b].concat();
    let an: Vec<f64> = [widen(g.input.data()), widen(&g.weight), widen(&g.bias)].concat();
    rel_error(&fd, &an)
}

/// Distinct values spaced 0.01 apart, so a ±1e-3 step never changes a
/// window's maximum.
pub fn pool_instance(rng: &mut ChaCha8Rng) -> f64 {
    let c = rng.gen_range(1..=3);
    let (h, w) = (rng.gen_range(2..=7), rng.gen_range(2..=7));
    let mut x: Vec<f32> = (0..c * h * w).map(|i| i as f32 * 0.01 - 0.5).collect();
    x.shuffle(rng);
    let input = Tensor::new(vec![c, h, w], x.clone()).unwrap();
    let (out, cache) = maxpool2x2_forward(&input).unwrap();
    let r = uniform(rng, out.len(), -1.0, 1.0);
    let g = maxpool2x2_backward(&Tensor::new(out.shape().to_vec(), r.clone()).unwrap(), &cache).unwrap();
    let fd = numeric(&x, 1e-3, |x| project(maxpool2x2_forward(&Tensor::new(vec![c, h, w], x.to_vec()).unwrap()).unwrap().0.data(), &r));
    rel_error(&fd, &widen(g.data()))
}

/// Inputs kept at least 0.05 away from the kink.
pub fn relu_instance(rng: &mut ChaCha8Rng) -> f64 {
    let n = rng.gen_range(1..=40);
    let x: Vec<f32> = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.05f32..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    let r = uniform(rng, n, -1.0, 1.0);
    let input = Tensor::new(vec![n], x.clone()).unwrap();
    let g = relu_backward(&Tensor::new(vec![n], r.clone()).unwrap(), &input).unwrap();
    let fd = numeric(&x, 1e-3, |x| project(relu_forward(&Tensor::new(vec![n], x.to_vec()).unwrap()).data(), &r));
    rel_error(&fd, &widen(g.data()))
}

/// Random head and targets; predicted `w, h` stay positive so the square
/// root is differentiable.
pub fn yolo_loss_instance(rng: &mut ChaCha8Rng) -> f64 {
    let head = HeadSpec {
        grid: rng.gen_range(1..=4),
        boxes: rng.gen_range(1..=2),
        classes: rng.gen_range(1..=3),
    };
    let n_obj = rng.gen_range(0..=head.grid * head.grid);
    let boxes: Vec<GroundTruth> = (0..n_obj)
        .map(|_| GroundTruth {
            bbox: BBox::new(rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.05..0.9), rng.gen_range(0.05..0.9)).unwrap(),
            class_id: rng.gen_range(0..head.classes),
        })
        .collect();
    let target = encode_targets(&boxes, head.grid, head.classes);
    let pred: Vec<f32> = (0..head.output_len())
        .map(|i| {
            let k = i % head.cell_len();
            let is_size = k < head.boxes * 5 && matches!(k % 5, 2 | 3);
            if is_size {
                rng.gen_range(0.1..0.8)
            } else {
                rng.gen_range(-0.3..1.2)
            }
        })
        .collect();
    let weights = LossWeights::default();
    let (_, an) = yolo_loss(&pred, &target, head, weights).unwrap();
    // small step: IoU has kinks where box edges cross
    let fd = numeric(&pred, 1e-5, |p| yolo_loss(p, &target, head, weights).unwrap().0);
    rel_error(&fd, &widen(&an))
}
