//! One function per acceptance criterion. Each returns a short summary on
//! success and the reason on failure, so the same check can back both a
//! `#[test]` and a line of the acceptance report.

use std::path::Path;
use std::time::Instant;

use microyolo_core::checkpoint::{export_quantized, load_quantized};
use microyolo_core::config::{check_deployability, parse_model_config, DeviceProfile, LayerSpec, ModelConfig, Shape};
use microyolo_core::data::{
    filter_max_objects, load_samples, split_90_10, synth_generate, MaxObjects, Sample, SynthConfig,
};
use microyolo_core::eval::{average_precision, evaluate, evaluate_detections, ApMethod, EvalSettings};
use microyolo_core::head::{decode_predictions, encode_targets, nms, perfect_output};
use microyolo_core::network::{Network, QuantizedModel};
use microyolo_core::ops::{conv2d_forward, fc_forward, ConvWeights, FcWeights};
use microyolo_core::profile::{compare_report, read_measurements, sig3};
use microyolo_core::quant::*;
use microyolo_core::tensor::Tensor;
use microyolo_core::train::{calibrate, train, TrainConfig, TrainOutput};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{gradcheck, oracles};

pub type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub const GRAD_INSTANCES: usize = 25;
pub const GRAD_TOLERANCE: f64 = 1e-3;

pub fn gradients() -> Outcome {
    let start = Instant::now();
    let ops: [(&str, fn(&mut ChaCha8Rng) -> f64); 5] = [
        ("conv", gradcheck::conv_instance),
        ("fc", gradcheck::fc_instance),
        ("maxpool", gradcheck::pool_instance),
        ("relu", gradcheck::relu_instance),
        ("yolo_loss", gradcheck::yolo_loss_instance),
    ];
    let mut summary = Vec::new();
    for (k, (name, check)) in ops.iter().enumerate() {
        let mut r = rng(100 + k as u64);
        let worst = (0..GRAD_INSTANCES).map(|_| check(&mut r)).fold(0.0, f64::max);
        ensure!(worst < GRAD_TOLERANCE, "{name}: relative error {worst:.2e} on one of {GRAD_INSTANCES} instances");
        summary.push(format!("{name} {worst:.1e}"));
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 120.0, "took {secs:.0}s");
    Ok(format!("{GRAD_INSTANCES} instances per op, worst {} ({secs:.1}s)", summary.join(", ")))
}

fn float_codes(out: &[f32], q: QuantParams, relu: bool) -> Vec<i32> {
    out.iter()
        .map(|&v| {
            let c = (v as f64 / q.scale() as f64).round().clamp(-128.0, 127.0) as i32;
            if relu {
                c.max(0)
            } else {
                c
            }
        })
        .collect()
}

fn uniform(r: &mut ChaCha8Rng, n: usize, a: f32) -> Vec<f32> {
    (0..n).map(|_| r.gen_range(-a..a)).collect()
}

/// One random conv or fc layer: int8 output codes against the float layer
/// evaluated on the dequantized input and weights. Returns the largest code
/// difference.
fn random_layer_code_error(r: &mut ChaCha8Rng, conv: bool) -> i32 {
    let relu = r.gen_bool(0.5);
    let (got, reference, qo) = if conv {
        let (ci, co, h, w) = (r.gen_range(1..=8), r.gen_range(1..=8), r.gen_range(1..=8), r.gen_range(1..=8));
        let wt = ConvWeights::new(co, ci, uniform(r, co * ci * 9, 0.5), uniform(r, co, 0.3)).unwrap();
        let amp = r.gen_range(0.1..4.0);
        let xs = uniform(r, ci * h * w, amp);
        let (qi, qw) = (choose_scale(&xs), choose_scale(&wt.weight));
        // output scale from the float range so codes are well spread
        let probe = conv2d_forward(&Tensor::new(vec![ci, h, w], xs.clone()).unwrap(), &wt).unwrap();
        let qo = choose_scale(probe.data());
        let layer = QuantizedLayer::conv(&wt, qi, qw, qo, relu).unwrap();
        let x = QuantizedTensor::quantize(&Tensor::new(vec![ci, h, w], xs).unwrap(), qi);
        let got = qconv2d_int8(&x, &layer).unwrap();
        let wdq = ConvWeights::new(co, ci, dequantize(&layer.weights, qw), wt.bias.clone()).unwrap();
        (got, conv2d_forward(&x.dequantize(), &wdq).unwrap(), qo)
    } else {
        let (n_in, n_out) = (r.gen_range(1..=64), r.gen_range(1..=32));
        let wt = FcWeights::new(n_out, n_in, uniform(r, n_in * n_out, 0.5), uniform(r, n_out, 0.3)).unwrap();
        let amp = r.gen_range(0.1..4.0);
        let xs = uniform(r, n_in, amp);
        let (qi, qw) = (choose_scale(&xs), choose_scale(&wt.weight));
        let probe = fc_forward(&Tensor::from_vec(xs.clone()), &wt).unwrap();
        let qo = choose_scale(probe.data());
        let layer = QuantizedLayer::fc(&wt, qi, qw, qo, relu).unwrap();
        let x = QuantizedTensor::quantize(&Tensor::from_vec(xs), qi);
        let got = qfc_int8(&x, &layer).unwrap();
        let wdq = FcWeights::new(n_out, n_in, dequantize(&layer.weights, qw), wt.bias.clone()).unwrap();
        (got, fc_forward(&x.dequantize(), &wdq).unwrap(), qo)
    };
    let want = float_codes(reference.data(), qo, relu);
    got.codes.data().iter().zip(&want).map(|(&g, &w)| (g as i32 - w).abs()).max().unwrap_or(0)
}

fn random_images(n: usize, seed: u64) -> Vec<Sample> {
    let mut r = rng(seed);
    (0..n)
        .map(|i| Sample {
            image: Tensor::new(vec![3, 88, 88], uniform(&mut r, 3 * 88 * 88, 1.0)).unwrap(),
            boxes: Vec::new(),
            source_id: format!("random-{i}"),
        })
        .collect()
}

pub fn quantization() -> Outcome {
    let mut r = rng(7);
    for _ in 0..100 {
        let n = r.gen_range(1..200);
        let range = r.gen_range(1e-3..100.0);
        let xs = uniform(&mut r, n, range);
        let q = choose_scale(&xs);
        let back = dequantize(&quantize(&xs, q), q);
        for (x, y) in xs.iter().zip(&back) {
            // the dequantized value itself is rounded to f32
            let err = (*x as f64 - *y as f64).abs();
            ensure!(
                err <= q.scale() as f64 / 2.0 + 1e-6 * x.abs() as f64,
                "round trip of {x} at scale {} off by {err}",
                q.scale()
            );
        }
        let once = fake_quant_forward(&xs, q);
        ensure!(fake_quant_forward(&once, q) == once, "fake quantization not idempotent");
    }

    let mut worst = 0;
    for i in 0..100 {
        worst = worst.max(random_layer_code_error(&mut r, i % 2 == 0));
    }
    ensure!(worst <= 1, "int8 layer output {worst} codes from the float reference");

    let net = Network::init(ModelConfig::reference_single_class(), 5);
    let images = random_images(4, 9);
    let scales = calibrate(&net, &net.weight_scales(), &images).map_err(|e| e.to_string())?;
    let a = QuantizedModel::from_network(&net, &scales).map_err(|e| e.to_string())?;
    let b = load_quantized(&export_quantized(&net, &scales).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    for s in &images {
        let first = a.forward_codes(&s.image).map_err(|e| e.to_string())?;
        let second = a.forward_codes(&s.image).map_err(|e| e.to_string())?;
        let exported = b.forward_codes(&s.image).map_err(|e| e.to_string())?;
        ensure!(first == second && first == exported, "int8 inference not reproducible");
    }
    Ok(format!("round trip, idempotence, 100 layers within {worst} code, int8 inference reproducible"))
}

pub fn map_oracle(work: &Path) -> Outcome {
    let mut r = rng(11);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = r.gen_range(0..40);
        let tp: Vec<bool> = (0..n).map(|_| r.gen_bool(0.5)).collect();
        // coarse scores so ties occur
        let scores: Vec<f32> = (0..n).map(|_| r.gen_range(0..12) as f32 / 11.0).collect();
        let num_gt = tp.iter().filter(|&&t| t).count() + r.gen_range(0..5usize).max(if n == 0 { 1 } else { 0 });
        let got = average_precision(&tp, &scores, num_gt, ApMethod::AllPoint).unwrap();
        let got11 = average_precision(&tp, &scores, num_gt, ApMethod::ElevenPoint).unwrap();
        worst = worst
            .max((got - oracles::ap_all_point(&tp, &scores, num_gt)).abs())
            .max((got11 - oracles::ap_eleven_point(&tp, &scores, num_gt)).abs());
    }
    ensure!(worst <= 1e-9, "AP differs from the envelope oracle by {worst:e}");

    for classes in [1, 3] {
        let descs = synth_generate(&SynthConfig::new(60, classes, 21, 4), work.join(format!("oracle-{classes}")))
            .map_err(|e| e.to_string())?;
        let head = if classes == 1 {
            ModelConfig::reference_single_class().head()
        } else {
            ModelConfig::reference_multi_class().head()
        };
        let settings = EvalSettings::default();
        let mut dets = Vec::new();
        for d in &descs {
            let out = perfect_output(&encode_targets(&d.boxes, head.grid, head.classes), head);
            let decoded = decode_predictions(&out, head, settings.conf_threshold).map_err(|e| e.to_string())?;
            dets.push(nms(&decoded, settings.nms_iou));
        }
        let gts: Vec<_> = descs.iter().map(|d| d.boxes.clone()).collect();
        let result = evaluate_detections(&dets, &gts, head.classes, &settings).map_err(|e| e.to_string())?;
        ensure!(result.map == 1.0, "{classes}-class perfect predictions give mAP {}", result.map);
    }
    Ok(format!("100 instances within {worst:.1e}; perfect predictions give mAP 1.0"))
}

pub fn deployability() -> Outcome {
    let single = ModelConfig::reference_single_class();
    let multi = ModelConfig::reference_multi_class();
    for cfg in [&single, &multi] {
        let report = check_deployability(cfg, DeviceProfile::Max78000);
        ensure!(report.passed(), "{report}");
        ensure!(report.weight_bytes <= 452_608, "{} weight bytes", report.weight_bytes);
        ensure!(cfg.input().1 < 90 && cfg.input().2 < 90, "input {:?}", cfg.input());
    }
    ensure!(single.head().output_len() == 176, "single-class head {}", single.head().output_len());
    ensure!(multi.head().output_len() == 128, "multi-class head {}", multi.head().output_len());

    let oversized = single.to_text().replace("fc 64 256", "fc 64 4096").replace("fc 256 176", "fc 4096 176");
    let oversized = parse_model_config(&oversized).map_err(|e| e.to_string())?;
    let report = check_deployability(&oversized, DeviceProfile::Max78000);
    let reasons: Vec<&str> = report.issues.iter().map(|i| i.reason()).collect();
    ensure!(reasons == ["weight memory"], "oversized config reported {reasons:?}");
    Ok(format!(
        "single {} B / 176 outputs, multi {} B / 128 outputs, oversized {} B fails on weight memory",
        check_deployability(&single, DeviceProfile::Max78000).weight_bytes,
        check_deployability(&multi, DeviceProfile::Max78000).weight_bytes,
        report.weight_bytes
    ))
}

pub fn dimension_chain() -> Outcome {
    let cfg = ModelConfig::reference_single_class();
    let mut sizes = vec![cfg.input().1];
    for (layer, shape) in cfg.layers().iter().zip(cfg.shapes()) {
        if let (LayerSpec::MaxPool2x2, Shape::Chw(_, h, w)) = (layer, shape) {
            ensure!(h == w, "non-square map {h}x{w}");
            sizes.push(h);
        }
    }
    ensure!(sizes.len() >= 5 && sizes[..5] == [88, 44, 22, 11, 5], "pooled sizes {sizes:?}");
    let out = Network::init(cfg, 1)
        .forward(&Tensor::zeros(vec![3, 88, 88]), microyolo_core::network::Precision::Float)
        .map_err(|e| e.to_string())?;
    ensure!(out.len() == 176, "forward produced {} values", out.len());
    let chain: Vec<String> = sizes.iter().map(|s| s.to_string()).collect();
    Ok(chain.join("→"))
}

pub fn fixture_path() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/devices.csv")
}

/// MAC count implied by 107 MAC/cycle over 5.5 ms at 50 MHz.
pub const PUBLISHED_MACS: u64 = 29_425_000;

pub fn profiler_fixture() -> Outcome {
    let rows = read_measurements(fixture_path()).map_err(|e| e.to_string())?;
    let report = compare_report(&rows, &ModelConfig::reference_single_class(), Some(PUBLISHED_MACS)).map_err(|e| e.to_string())?;
    let dev = |name: &str| report.devices.iter().find(|d| d.measurement.device == name).ok_or(format!("no {name} row"));
    let max = dev("MAX78000")?;
    let apollo = dev("Apollo4b")?;
    let h7 = dev("STM32H7A3")?;
    let checks = [
        ("MAX78000 MAC/cycle", sig3(max.mac_per_cycle_reference.unwrap_or(f64::NAN)), "107"),
        ("Apollo4b µW/MHz", sig3(apollo.power_efficiency_uw_per_mhz), "59.0"),
        ("MAX78000 µJ", sig3(max.energy_uj), "196"),
        ("STM32H7A3 latency ratio", sig3(h7.latency_vs_fastest.unwrap_or(f64::NAN)), "65.3"),
        ("Apollo4b energy ratio", sig3(apollo.energy_vs_best.unwrap_or(f64::NAN)), "31.1"),
    ];
    for (what, got, want) in &checks {
        ensure!(got == want, "{what}: {got}, expected {want}");
    }
    ensure!(h7.latency_vs_fastest.unwrap() >= 65.0, "latency ratio below 65");
    Ok(checks.iter().map(|(w, g, _)| format!("{w} {g}")).collect::<Vec<_>>().join(", "))
}

pub fn restriction_filters() -> Outcome {
    let mut r = rng(31);
    let limits: Vec<MaxObjects> = (0..=8).map(MaxObjects::AtMost).chain([MaxObjects::Unlimited]).collect();
    for case in 0..1000 {
        let n = r.gen_range(0..80);
        let data: Vec<(usize, usize)> = (0..n).map(|i| (i, r.gen_range(0..10))).collect();
        let count = |s: &(usize, usize)| s.1;
        let mut prev: Option<Vec<(usize, usize)>> = None;
        for &limit in &limits {
            let kept = filter_max_objects(&data, limit, count);
            let expected: Vec<_> = data.iter().copied().filter(|s| limit.admits(s.1)).collect();
            ensure!(kept == expected, "case {case}: {limit:?} kept the wrong samples");
            if let Some(p) = &prev {
                ensure!(p.iter().all(|s| kept.contains(s)), "case {case}: raising the limit to {limit:?} dropped samples");
            }
            prev = Some(kept);
        }
        ensure!(prev.as_ref() == Some(&data), "case {case}: unrestricted filter changed the data");

        if n >= 2 {
            let seed = r.gen();
            let a = split_90_10(&data, seed).map_err(|e| e.to_string())?;
            let b = split_90_10(&data, seed).map_err(|e| e.to_string())?;
            ensure!(a.train == b.train && a.validation == b.validation, "case {case}: split not deterministic");
            let expected_train = ((0.9 * n as f64).ceil() as usize).min(n - 1);
            ensure!(a.train.len() == expected_train, "case {case}: {} train of {n}", a.train.len());
            let mut all: Vec<_> = a.train.iter().chain(&a.validation).copied().collect();
            all.sort();
            ensure!(all == data, "case {case}: split is not a partition");
        }
    }
    Ok("1000 random datasets: monotone filters, deterministic partitioning splits".into())
}

/// Hyperparameters of the desk-scale run.
pub fn end_to_end_config() -> TrainConfig {
    TrainConfig {
        epochs_float: 30,
        epochs_qat: 10,
        batch_size: 32,
        lr0: E2E_LR,
        lr0_qat: Some(E2E_LR * 0.1),
        momentum: E2E_MOMENTUM,
        grad_clip: Some(E2E_CLIP),
        // decay late: the loss is still falling at the initial rate until then
        milestones: vec![0.8, 0.95],
        seed: 1,
        max_objects: MaxObjects::AtMost(3),
        ..TrainConfig::default()
    }
}

pub const E2E_LR: f32 = 3e-3;
pub const E2E_MOMENTUM: f32 = 0.9;
pub const E2E_CLIP: f32 = 10.0;

pub fn end_to_end(work: &Path) -> Outcome {
    let start = Instant::now();
    let model = ModelConfig::reference_single_class();
    // 2,222 images split 90/10 gives exactly 2,000 for training
    let pool = synth_generate(&SynthConfig::new(2222, 1, 1, 3), work.join("train")).map_err(|e| e.to_string())?;
    let test = synth_generate(&SynthConfig::new(400, 1, 2, 3), work.join("test")).map_err(|e| e.to_string())?;
    let pool = load_samples(&pool, 88, 88).map_err(|e| e.to_string())?;
    let test = load_samples(&test, 88, 88).map_err(|e| e.to_string())?;
    let split = split_90_10(&pool, 1).map_err(|e| e.to_string())?;
    ensure!(split.train.len() == 2000, "{} training images", split.train.len());

    let cfg = end_to_end_config();
    let run = |dir: &str| {
        train(&cfg, &model, &split.train, &split.validation, &TrainOutput {
            dir: Some(work.join(dir)),
            verbose: std::env::var_os("MICROYOLO_VERBOSE").is_some(),
        })
        .map_err(|e| e.to_string())
    };
    let first = run("run-a")?;
    let first_secs = start.elapsed().as_secs_f64();
    let scales = first.checkpoint.scales.clone().ok_or("no quantization scales after QAT")?;
    let blob = export_quantized(&first.checkpoint.network, &scales).map_err(|e| e.to_string())?;
    let int8 = load_quantized(&blob).map_err(|e| e.to_string())?;
    let settings = EvalSettings::default();
    let float_map = evaluate(&first.checkpoint.network, &test, &settings).map_err(|e| e.to_string())?.map;
    let int8_map = evaluate(&int8, &test, &settings).map_err(|e| e.to_string())?.map;
    let second = run("run-b")?;
    let bitwise = second.checkpoint.to_bytes() == first.checkpoint.to_bytes();

    let summary = format!(
        "float mAP {float_map:.3}, int8 mAP {int8_map:.3}, run {:.0} min, rerun bitwise {}",
        first_secs / 60.0,
        if bitwise { "identical" } else { "DIFFERENT" }
    );
    ensure!(float_map >= 0.80, "{summary}: float mAP below 0.80");
    ensure!((float_map - int8_map).abs() <= 0.05, "{summary}: int8 gap above 0.05");
    ensure!(bitwise, "{summary}");
    Ok(summary)
}
