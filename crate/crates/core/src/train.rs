//! Two-phase training: float epochs, then quantization-aware epochs with
//! frozen weight scales and calibrated activation scales.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::checkpoint::{Checkpoint, Phase, TrainMeta};
use crate::config::ModelConfig;
use crate::data::{filter_max_objects, MaxObjects, Sample};
use crate::error::{Error, Result};
use crate::head::{encode_targets, yolo_loss, LossWeights};
use crate::network::{Gradients, LayerWeights, Network, Precision, QuantScales};
use crate::quant::{scale_for_max, QuantParams};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs_float: u32,
    pub epochs_qat: u32,
    pub lr0: f32,
    /// Starting rate of the QAT phase; `lr0` when unset.
    pub lr0_qat: Option<f32>,
    pub weight_decay: f32,
    /// Heavy-ball momentum; 0 gives plain SGD.
    pub momentum: f32,
    pub batch_size: usize,
    /// Fractions of each phase's epochs at which the rate is multiplied by
    /// `lr_factor`.
    pub milestones: Vec<f32>,
    pub lr_factor: f32,
    pub seed: u64,
    pub max_objects: MaxObjects,
    pub hflip: bool,
    pub loss: LossWeights,
    /// Rescale each batch gradient to at most this global L2 norm.
    pub grad_clip: Option<f32>,
    /// Write a checkpoint every this many epochs (0: only the final one).
    pub checkpoint_every: u32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs_float: 350,
            epochs_qat: 300,
            lr0: 5e-4,
            lr0_qat: None,
            weight_decay: 5e-4,
            momentum: 0.0,
            batch_size: 32,
            milestones: vec![0.5, 0.8],
            lr_factor: 0.1,
            seed: 0,
            max_objects: MaxObjects::Unlimited,
            hflip: false,
            loss: LossWeights::default(),
            grad_clip: None,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            return bad(format!("lr0 must be ≥ 0, got {}", self.lr0));
        }
        if let Some(lr) = self.lr0_qat {
            if !(lr >= 0.0 && lr.is_finite()) {
                return bad(format!("lr0_qat must be ≥ 0, got {lr}"));
            }
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight decay must be ≥ 0, got {}", self.weight_decay));
        }
        if !(self.momentum >= 0.0 && self.momentum < 1.0) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0 && c.is_finite()) {
                return bad(format!("gradient clip must be positive, got {c}"));
            }
        }
        if self.batch_size == 0 {
            return bad("batch size must be ≥ 1".into());
        }
        if !(self.lr_factor > 0.0 && self.lr_factor <= 1.0) {
            return bad(format!("lr factor must be in (0, 1], got {}", self.lr_factor));
        }
        let in_unit = self.milestones.iter().all(|&m| m > 0.0 && m < 1.0);
        let increasing = self.milestones.windows(2).all(|w| w[0] < w[1]);
        if !in_unit || !increasing {
            return bad(format!("milestones {:?} must be strictly increasing in (0, 1)", self.milestones));
        }
        Ok(())
    }

    fn phase_lr0(&self, phase: Phase) -> f32 {
        match phase {
            Phase::Float => self.lr0,
            Phase::Qat => self.lr0_qat.unwrap_or(self.lr0),
        }
    }
}

/// In-place `p ← p − lr·(g + wd·p)`.
pub fn sgd_step(params: &mut [f32], grads: &[f32], lr: f32, weight_decay: f32) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::shape(
            "sgd_step",
            format!("{} params, {} grads", params.len(), grads.len()),
        ));
    }
    if grads.iter().any(|g| g.is_nan()) {
        return Err(Error::NonFinite("sgd_step gradient"));
    }
    for (p, &g) in params.iter_mut().zip(grads) {
        *p -= lr * (g + weight_decay * *p);
    }
    Ok(())
}

/// Momentum variant: `v ← μ·v + g + wd·p`, then `p ← p − lr·v`. With
/// `μ = 0` this is exactly [`sgd_step`].
pub fn sgd_momentum_step(params: &mut [f32], grads: &[f32], velocity: &mut [f32], lr: f32, weight_decay: f32, momentum: f32) -> Result<()> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(Error::shape(
            "sgd_momentum_step",
            format!("{} params, {} grads, {} velocity", params.len(), grads.len(), velocity.len()),
        ));
    }
    if grads.iter().any(|g| g.is_nan()) {
        return Err(Error::NonFinite("sgd_momentum_step gradient"));
    }
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = momentum * *v + (g + weight_decay * *p);
        *p -= lr * *v;
    }
    Ok(())
}

/// Rate for `epoch` (0-based, within a phase of `phase_epochs` epochs),
/// starting from `lr0`. A milestone `m` is passed once
/// `epoch ≥ round(m · phase_epochs)`.
pub fn multistep_lr(epoch: u32, phase_epochs: u32, lr0: f32, milestones: &[f32], factor: f32) -> f32 {
    let passed = milestones
        .iter()
        .filter(|&&m| epoch as f64 >= (m as f64 * phase_epochs as f64).round())
        .count();
    lr0 * factor.powi(passed as i32)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    /// 1-based across both phases.
    pub epoch: u32,
    pub phase: &'static str,
    pub lr: f32,
    pub train_loss: f64,
    pub val_loss: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochLog>,
    /// Checkpoint files written along the way.
    pub written: Vec<PathBuf>,
}

/// Where training writes its log and checkpoints.
#[derive(Debug, Clone, Default)]
pub struct TrainOutput {
    pub dir: Option<PathBuf>,
    /// Print a line per epoch through `log::info!`.
    pub verbose: bool,
}

fn add_into(acc: &mut Gradients, g: &Gradients) {
    for (a, b) in acc.iter_mut().zip(g) {
        let (aw, ab) = a.parts_mut();
        for (x, y) in aw.iter_mut().zip(b.weight()) {
            *x += y;
        }
        for (x, y) in ab.iter_mut().zip(b.bias()) {
            *x += y;
        }
    }
}

struct SampleResult {
    loss: f64,
    grads: Gradients,
    observed_max: Vec<f32>,
}

fn sample_step(
    net: &Network,
    eff: &[LayerWeights],
    precision: Precision<'_>,
    image: &Tensor,
    sample: &Sample,
    loss_weights: LossWeights,
    flip: bool,
) -> Result<SampleResult> {
    let head = net.config().head();
    let flipped;
    let (image, boxes) = if flip {
        flipped = Sample {
            image: image.clone(),
            boxes: sample.boxes.clone(),
            source_id: String::new(),
        }
        .hflip();
        (&flipped.image, &flipped.boxes)
    } else {
        (image, &sample.boxes)
    };
    let (out, trace) = net.forward_traced(image, eff, precision)?;
    let target = encode_targets(boxes, head.grid, head.classes);
    let (loss, grad) = yolo_loss(out.data(), &target, head, loss_weights)?;
    let observed_max = trace.observed_max.clone();
    let grads = net.backward(trace, eff, &Tensor::new(out.shape().to_vec(), grad)?)?;
    Ok(SampleResult {
        loss,
        grads,
        observed_max,
    })
}

/// Mean per-sample loss over `samples` under `precision`.
pub fn dataset_loss(net: &Network, samples: &[Sample], precision: Precision<'_>, loss_weights: LossWeights) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let head = net.config().head();
    let eff = net.effective_weights(precision);
    let losses = samples
        .par_iter()
        .map(|s| {
            let (out, _) = net.forward_traced(&s.image, &eff, precision)?;
            let target = encode_targets(&s.boxes, head.grid, head.classes);
            Ok(yolo_loss(out.data(), &target, head, loss_weights)?.0)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum::<f64>() / samples.len() as f64)
}

/// Activation scales from the running max of each quantization point over
/// `samples`, with weights fake-quantized at `weight_scales`.
pub fn calibrate(net: &Network, weight_scales: &[QuantParams], samples: &[Sample]) -> Result<QuantScales> {
    let zeros = vec![0.0f32; net.activation_points()];
    let precision = Precision::Calibrating {
        weights: weight_scales,
        running_max: &zeros,
    };
    let eff = net.effective_weights(precision);
    let maxima = samples
        .par_iter()
        .map(|s| Ok(net.forward_traced(&s.image, &eff, precision)?.1.observed_max))
        .collect::<Result<Vec<_>>>()?;
    let mut running = zeros.clone();
    for m in &maxima {
        for (r, v) in running.iter_mut().zip(m) {
            *r = r.max(*v);
        }
    }
    Ok(QuantScales {
        weights: weight_scales.to_vec(),
        activations: running.into_iter().map(scale_for_max).collect(),
    })
}

fn epoch_rng(seed: u64, epoch: u32) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add((epoch as u64 + 1).wrapping_mul(0xA076_1D64_78BD_642F)))
}

/// Runs both phases from a seeded initialization. Batches are evaluated in
/// parallel; per-sample gradients are summed in sample order so results do
/// not depend on the thread count.
pub fn train(cfg: &TrainConfig, model: &ModelConfig, train_set: &[Sample], val_set: &[Sample], output: &TrainOutput) -> Result<TrainOutcome> {
    cfg.validate()?;
    let train_set = filter_max_objects(train_set, cfg.max_objects, |s: &Sample| s.boxes.len());
    if train_set.is_empty() {
        return Err(Error::Dataset("training set is empty after filtering".into()));
    }
    let classes = model.head().classes;
    if let Some(bad) = train_set.iter().chain(val_set).flat_map(|s| &s.boxes).find(|g| g.class_id >= classes) {
        return Err(Error::Dataset(format!(
            "class id {} out of range for a {classes}-class model",
            bad.class_id
        )));
    }

    let mut writer = match &output.dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            Some(csv::Writer::from_path(dir.join("train_log.csv"))?)
        }
        None => None,
    };

    let mut net = Network::init(model.clone(), cfg.seed);
    let mut scales: Option<QuantScales> = None;
    let mut weight_scales: Vec<QuantParams> = Vec::new();
    let mut running_max = vec![0.0f32; net.activation_points()];
    let mut velocity: Vec<(Vec<f32>, Vec<f32>)> = net
        .weights()
        .iter()
        .map(|w| (vec![0.0; w.weight().len()], vec![0.0; w.bias().len()]))
        .collect();
    let mut history = Vec::new();
    let mut written = Vec::new();
    let start = Instant::now();
    let total = cfg.epochs_float + cfg.epochs_qat;
    let mut last_good = Checkpoint {
        network: net.clone(),
        scales: None,
        meta: TrainMeta {
            epoch: 0,
            phase: Phase::Float,
            seed: cfg.seed,
        },
    };

    for epoch in 0..total {
        let (phase, phase_epoch, phase_len) = if epoch < cfg.epochs_float {
            (Phase::Float, epoch, cfg.epochs_float)
        } else {
            (Phase::Qat, epoch - cfg.epochs_float, cfg.epochs_qat)
        };
        if phase == Phase::Qat && phase_epoch == 0 {
            weight_scales = net.weight_scales();
        }
        let calibrating = phase == Phase::Qat && phase_epoch == 0;
        let lr = multistep_lr(phase_epoch, phase_len, cfg.phase_lr0(phase), &cfg.milestones, cfg.lr_factor);

        let mut rng = epoch_rng(cfg.seed, epoch);
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut rng);
        let flips: Vec<bool> = order.iter().map(|_| cfg.hflip && rng.gen_bool(0.5)).collect();

        let mut epoch_loss = 0.0f64;
        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            let batch_flips = &flips[batch_idx * cfg.batch_size..][..batch.len()];
            let precision = match (phase, &scales) {
                (Phase::Float, _) => Precision::Float,
                (Phase::Qat, _) if calibrating => Precision::Calibrating {
                    weights: &weight_scales,
                    running_max: &running_max,
                },
                (Phase::Qat, Some(s)) => Precision::FakeQuant(s),
                (Phase::Qat, None) => unreachable!("scales are frozen after the calibration epoch"),
            };
            let eff = net.effective_weights(precision);
            let results = batch
                .par_iter()
                .zip(batch_flips)
                .map(|(&i, &flip)| {
                    let s = &train_set[i];
                    sample_step(&net, &eff, precision, &s.image, s, cfg.loss, flip)
                })
                .collect::<Vec<Result<SampleResult>>>();

            let mut acc: Option<Gradients> = None;
            let mut batch_loss = 0.0f64;
            let mut batch_max = vec![0.0f32; running_max.len()];
            for r in results {
                let r = match r {
                    Ok(r) => r,
                    Err(Error::NonFinite(_)) => {
                        return Err(Error::Diverged {
                            epoch: epoch + 1,
                            last_good: Box::new(last_good),
                        })
                    }
                    Err(e) => return Err(e),
                };
                batch_loss += r.loss;
                for (m, v) in batch_max.iter_mut().zip(&r.observed_max) {
                    *m = m.max(*v);
                }
                match &mut acc {
                    None => acc = Some(r.grads),
                    Some(a) => add_into(a, &r.grads),
                }
            }
            let mut grads = acc.expect("non-empty batch");
            if phase == Phase::Qat {
                net.mask_weight_gradients(&mut grads, &weight_scales);
            }
            let mut inv = 1.0 / batch.len() as f32;
            if let Some(clip) = cfg.grad_clip {
                let norm = grads
                    .iter()
                    .flat_map(|g| g.weight().iter().chain(g.bias()))
                    .map(|&v| (v as f64 * inv as f64).powi(2))
                    .sum::<f64>()
                    .sqrt();
                if norm > clip as f64 {
                    inv *= (clip as f64 / norm) as f32;
                }
            }
            for ((w, g), (vw, vb)) in net.weights_mut().iter_mut().zip(&grads).zip(velocity.iter_mut()) {
                let gw: Vec<f32> = g.weight().iter().map(|v| v * inv).collect();
                let gb: Vec<f32> = g.bias().iter().map(|v| v * inv).collect();
                let (pw, pb) = w.parts_mut();
                let step = if cfg.momentum == 0.0 {
                    sgd_step(pw, &gw, lr, cfg.weight_decay).and_then(|_| sgd_step(pb, &gb, lr, cfg.weight_decay))
                } else {
                    sgd_momentum_step(pw, &gw, vw, lr, cfg.weight_decay, cfg.momentum)
                        .and_then(|_| sgd_momentum_step(pb, &gb, vb, lr, cfg.weight_decay, cfg.momentum))
                };
                if let Err(Error::NonFinite(_)) = step {
                    return Err(Error::Diverged {
                        epoch: epoch + 1,
                        last_good: Box::new(last_good),
                    });
                }
                step?;
            }
            if calibrating {
                for (r, m) in running_max.iter_mut().zip(&batch_max) {
                    *r = r.max(*m);
                }
            }
            epoch_loss += batch_loss;
        }

        if calibrating {
            scales = Some(QuantScales {
                weights: weight_scales.clone(),
                activations: running_max.iter().map(|&m| scale_for_max(m)).collect(),
            });
        }
        let train_loss = epoch_loss / train_set.len() as f64;
        let val_precision = match &scales {
            Some(s) => Precision::FakeQuant(s),
            None => Precision::Float,
        };
        let val_loss = match dataset_loss(&net, val_set, val_precision, cfg.loss) {
            Ok(v) => v,
            Err(Error::NonFinite(_)) => f64::NAN,
            Err(e) => return Err(e),
        };
        let weights_finite = net.weights().iter().all(|w| w.weight().iter().chain(w.bias()).all(|v| v.is_finite()));
        if !train_loss.is_finite() || !val_loss.is_finite() || !weights_finite {
            return Err(Error::Diverged {
                epoch: epoch + 1,
                last_good: Box::new(last_good),
            });
        }

        let entry = EpochLog {
            epoch: epoch + 1,
            phase: phase.as_str(),
            lr,
            train_loss,
            val_loss,
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        if output.verbose {
            log::info!(
                "epoch {:>4} {:<5} lr {:.2e} train {:.4} val {:.4} ({:.1}s)",
                entry.epoch,
                entry.phase,
                entry.lr,
                entry.train_loss,
                entry.val_loss,
                entry.wall_time_s
            );
        }
        if let Some(w) = writer.as_mut() {
            w.serialize(&entry)?;
            w.flush()?;
        }
        history.push(entry);

        last_good = Checkpoint {
            network: net.clone(),
            scales: scales.clone(),
            meta: TrainMeta {
                epoch: epoch + 1,
                phase,
                seed: cfg.seed,
            },
        };
        if let (Some(dir), true) = (&output.dir, cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0) {
            let path = dir.join(format!("epoch-{:04}.ckpt", epoch + 1));
            last_good.save(&path)?;
            written.push(path);
        }
    }

    // No QAT epochs: still provide scales so the result can be exported.
    if cfg.epochs_qat == 0 {
        last_good.scales = Some(calibrate(&net, &net.weight_scales(), &train_set)?);
    }
    if let Some(dir) = &output.dir {
        let path = dir.join("final.ckpt");
        last_good.save(&path)?;
        written.push(path);
    }
    Ok(TrainOutcome {
        checkpoint: last_good,
        history,
        written,
    })
}

/// Reads a training log written by [`train`].
pub fn read_log(path: impl AsRef<Path>) -> Result<Vec<(u32, String, f64, f64)>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or("").to_string();
        let num = |i: usize| -> Result<f64> {
            field(i)
                .parse()
                .map_err(|_| Error::Format(format!("train log: bad number `{}`", field(i))))
        };
        out.push((num(0)? as u32, field(1), num(3)?, num(4)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_arithmetic() {
        let mut p = [1.0f32];
        sgd_step(&mut p, &[0.0], 5e-4, 5e-4).unwrap();
        assert_eq!(p[0], 1.0 - 2.5e-7);
        let mut p = [0.3f32, -2.0];
        sgd_step(&mut p, &[10.0, 5.0], 0.0, 5e-4).unwrap();
        assert_eq!(p, [0.3, -2.0]);
        assert!(sgd_step(&mut p, &[f32::NAN, 0.0], 0.1, 0.0).is_err());
        assert!(sgd_step(&mut p, &[0.0], 0.1, 0.0).is_err());
    }

    #[test]
    fn sgd_quadratic_bowl() {
        let mut p = [1.0f32];
        let mut prev = 1.0f32;
        for k in 1..=10 {
            let g = [2.0 * p[0]];
            sgd_step(&mut p, &g, 0.4, 0.0).unwrap();
            assert!(p[0].abs() < prev.abs());
            assert!((p[0] - 0.2f32.powi(k)).abs() < 1e-6);
            prev = p[0];
        }
    }

    #[test]
    fn momentum_zero_is_plain_sgd() {
        let g = [0.3f32, -1.2, 4.0];
        let (mut a, mut b) = ([1.0f32, 2.0, -3.0], [1.0f32, 2.0, -3.0]);
        let mut v = [0.0f32; 3];
        for _ in 0..5 {
            sgd_step(&mut a, &g, 0.1, 5e-4).unwrap();
            sgd_momentum_step(&mut b, &g, &mut v, 0.1, 5e-4, 0.0).unwrap();
        }
        assert_eq!(a, b);
    }

    #[test]
    fn momentum_accumulates() {
        let mut p = [0.0f32];
        let mut v = [0.0f32];
        sgd_momentum_step(&mut p, &[1.0], &mut v, 1.0, 0.0, 0.5).unwrap();
        sgd_momentum_step(&mut p, &[1.0], &mut v, 1.0, 0.0, 0.5).unwrap();
        // steps of 1 and 1.5
        assert_eq!(p, [-2.5]);
        assert!(sgd_momentum_step(&mut p, &[1.0], &mut [], 1.0, 0.0, 0.5).is_err());
    }

    #[test]
    fn schedule() {
        let m = [0.5, 0.8];
        assert_eq!(multistep_lr(0, 350, 5e-4, &m, 0.1), 5e-4);
        assert_eq!(multistep_lr(174, 350, 5e-4, &m, 0.1), 5e-4);
        assert!((multistep_lr(176, 350, 5e-4, &m, 0.1) - 5e-5).abs() < 1e-10);
        assert!((multistep_lr(300, 350, 5e-4, &m, 0.1) - 5e-6).abs() < 1e-11);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = [
            TrainConfig { lr0: -1e-3, ..Default::default() },
            TrainConfig { momentum: 1.0, ..Default::default() },
            TrainConfig { milestones: vec![0.8, 0.5], ..Default::default() },
            TrainConfig { milestones: vec![0.5, 1.0], ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }
}
