//! VOC-style average precision and mAP, plus restriction-matrix reports.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::config::HeadSpec;
use crate::data::{filter_max_objects, MaxObjects, Sample};
use crate::error::{Error, Result};
use crate::head::{decode_predictions, iou, nms, rank_by_score, Detection, GroundTruth};
use crate::network::{Network, Precision, QuantScales, QuantizedModel};
use crate::tensor::Tensor;

/// How the precision-recall curve is integrated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ApMethod {
    /// Area under the monotone precision envelope.
    #[default]
    AllPoint,
    /// Mean of the envelope sampled at recall 0, 0.1, ..., 1.
    ElevenPoint,
}

/// Greedy matching of detections (already ranked by score) against ground
/// truth. Each detection takes the unmatched same-class box with the highest
/// IoU (lowest index on ties) if that IoU reaches `iou_threshold`. Returns
/// one true-positive flag per detection.
pub fn match_detections(dets: &[Detection], gts: &[GroundTruth], iou_threshold: f32) -> Vec<bool> {
    let mut used = vec![false; gts.len()];
    dets.iter()
        .map(|d| {
            let mut best: Option<(usize, f32)> = None;
            for (j, g) in gts.iter().enumerate() {
                if used[j] || g.class_id != d.class_id {
                    continue;
                }
                let o = iou(&d.bbox, &g.bbox);
                if best.is_none_or(|(_, b)| o > b) {
                    best = Some((j, o));
                }
            }
            match best {
                Some((j, o)) if o >= iou_threshold => {
                    used[j] = true;
                    true
                }
                _ => false,
            }
        })
        .collect()
}

/// Average precision of detections labelled true/false positive, ranked by
/// descending score (ties keep input order). `None` when there is no ground
/// truth to recall.
pub fn average_precision(tp: &[bool], scores: &[f32], num_gt: usize, method: ApMethod) -> Option<f64> {
    assert_eq!(tp.len(), scores.len(), "one score per label");
    if num_gt == 0 {
        return None;
    }
    let order = rank_by_score(scores.iter().copied());
    let mut recall = Vec::with_capacity(order.len());
    let mut precision = Vec::with_capacity(order.len());
    let (mut hits, mut seen) = (0usize, 0usize);
    for i in order {
        seen += 1;
        if tp[i] {
            hits += 1;
        }
        recall.push(hits as f64 / num_gt as f64);
        precision.push(hits as f64 / seen as f64);
    }
    // envelope: best precision at this recall or beyond
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    Some(match method {
        ApMethod::AllPoint => {
            let mut ap = 0.0;
            let mut prev_recall = 0.0;
            for (r, p) in recall.iter().zip(&precision) {
                ap += (r - prev_recall) * p;
                prev_recall = *r;
            }
            ap
        }
        ApMethod::ElevenPoint => {
            (0..=10)
                .map(|t| {
                    let t = t as f64 / 10.0;
                    recall
                        .iter()
                        .zip(&precision)
                        .filter(|(r, _)| **r >= t)
                        .map(|(_, p)| *p)
                        .fold(0.0, f64::max)
                })
                .sum::<f64>()
                / 11.0
        }
    })
}

/// Anything that maps a preprocessed image to a raw head output.
pub trait Detector: Sync {
    fn head(&self) -> HeadSpec;
    fn raw_output(&self, image: &Tensor) -> Result<Vec<f32>>;
}

impl Detector for Network {
    fn head(&self) -> HeadSpec {
        self.config().head()
    }

    fn raw_output(&self, image: &Tensor) -> Result<Vec<f32>> {
        Ok(self.forward(image, Precision::Float)?.into_data())
    }
}

/// A float network evaluated with fake quantization at fixed scales.
pub struct FakeQuantDetector {
    pub network: Network,
    pub scales: QuantScales,
}

impl Detector for FakeQuantDetector {
    fn head(&self) -> HeadSpec {
        self.network.config().head()
    }

    fn raw_output(&self, image: &Tensor) -> Result<Vec<f32>> {
        Ok(self.network.forward(image, Precision::FakeQuant(&self.scales))?.into_data())
    }
}

impl Detector for QuantizedModel {
    fn head(&self) -> HeadSpec {
        self.config().head()
    }

    fn raw_output(&self, image: &Tensor) -> Result<Vec<f32>> {
        Ok(self.forward(image)?.into_data())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSettings {
    pub conf_threshold: f32,
    pub nms_iou: f32,
    pub match_iou: f32,
    pub ap_method: ApMethod,
    /// Evaluate only images with at most this many objects.
    pub max_objects: MaxObjects,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            conf_threshold: 0.1,
            nms_iou: 0.5,
            match_iou: 0.5,
            ap_method: ApMethod::AllPoint,
            max_objects: MaxObjects::Unlimited,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    /// `None` for classes without ground truth.
    pub per_class_ap: Vec<Option<f64>>,
    pub map: f64,
    pub ground_truth: Vec<usize>,
    pub detections: usize,
    pub images: usize,
    pub iou_threshold: f32,
    pub max_objects: MaxObjects,
}

/// Scores precomputed per-image detections against ground truth.
pub fn evaluate_detections(
    detections: &[Vec<Detection>],
    ground_truth: &[Vec<GroundTruth>],
    classes: usize,
    settings: &EvalSettings,
) -> Result<EvalResult> {
    if detections.len() != ground_truth.len() {
        return Err(Error::InvalidArgument(format!(
            "{} detection lists for {} images",
            detections.len(),
            ground_truth.len()
        )));
    }
    let mut num_gt = vec![0usize; classes];
    for g in ground_truth.iter().flatten() {
        if g.class_id >= classes {
            return Err(Error::InvalidArgument(format!(
                "ground-truth class {} but only {classes} classes",
                g.class_id
            )));
        }
        num_gt[g.class_id] += 1;
    }

    let mut labels: Vec<Vec<(f32, bool)>> = vec![Vec::new(); classes];
    for (dets, gts) in detections.iter().zip(ground_truth) {
        let order = rank_by_score(dets.iter().map(|d| d.score));
        let ranked: Vec<Detection> = order.iter().map(|&i| dets[i]).collect();
        for (d, tp) in ranked.iter().zip(match_detections(&ranked, gts, settings.match_iou)) {
            if d.class_id >= classes {
                return Err(Error::InvalidArgument(format!("detection class {} out of range", d.class_id)));
            }
            labels[d.class_id].push((d.score, tp));
        }
    }

    let per_class_ap: Vec<Option<f64>> = labels
        .iter()
        .zip(&num_gt)
        .map(|(l, &n)| {
            let scores: Vec<f32> = l.iter().map(|x| x.0).collect();
            let tp: Vec<bool> = l.iter().map(|x| x.1).collect();
            average_precision(&tp, &scores, n, settings.ap_method)
        })
        .collect();
    let present: Vec<f64> = per_class_ap.iter().flatten().copied().collect();
    let map = if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    Ok(EvalResult {
        per_class_ap,
        map,
        ground_truth: num_gt,
        detections: detections.iter().map(Vec::len).sum(),
        images: detections.len(),
        iou_threshold: settings.match_iou,
        max_objects: settings.max_objects,
    })
}

/// Runs the detector on every image, then decode and NMS. Images are
/// processed in parallel; output order follows `samples`.
pub fn detect_all(detector: &dyn Detector, samples: &[Sample], settings: &EvalSettings) -> Result<Vec<Vec<Detection>>> {
    let head = detector.head();
    samples
        .par_iter()
        .map(|s| {
            let out = detector.raw_output(&s.image)?;
            let dets = decode_predictions(&out, head, settings.conf_threshold)?;
            Ok(nms(&dets, settings.nms_iou))
        })
        .collect()
}

/// Inference, decode, NMS, matching and AP over `samples` restricted to
/// `settings.max_objects`.
pub fn evaluate(detector: &dyn Detector, samples: &[Sample], settings: &EvalSettings) -> Result<EvalResult> {
    let classes = detector.head().classes;
    if let Some(g) = samples.iter().flat_map(|s| &s.boxes).find(|g| g.class_id >= classes) {
        return Err(Error::InvalidArgument(format!(
            "dataset has class {} but the model predicts {classes} classes",
            g.class_id
        )));
    }
    let kept = filter_max_objects(samples, settings.max_objects, |s: &Sample| s.boxes.len());
    let dets = detect_all(detector, &kept, settings)?;
    let gts: Vec<Vec<GroundTruth>> = kept.iter().map(|s| s.boxes.clone()).collect();
    evaluate_detections(&dets, &gts, classes, settings)
}

/// mAP for every (training restriction, evaluation restriction) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalMatrix {
    pub train_restrictions: Vec<MaxObjects>,
    pub eval_restrictions: Vec<MaxObjects>,
    /// `cells[i][j]`: model `i` evaluated under restriction `j`.
    pub cells: Vec<Vec<EvalResult>>,
}

pub fn eval_matrix(
    models: &[(MaxObjects, &dyn Detector)],
    samples: &[Sample],
    eval_restrictions: &[MaxObjects],
    settings: &EvalSettings,
) -> Result<EvalMatrix> {
    let mut cells = Vec::with_capacity(models.len());
    for (_, model) in models {
        let row = eval_restrictions
            .iter()
            .map(|&r| {
                evaluate(
                    *model,
                    samples,
                    &EvalSettings {
                        max_objects: r,
                        ..*settings
                    },
                )
            })
            .collect::<Result<Vec<_>>>()?;
        cells.push(row);
    }
    Ok(EvalMatrix {
        train_restrictions: models.iter().map(|m| m.0).collect(),
        eval_restrictions: eval_restrictions.to_vec(),
        cells,
    })
}

fn pct(v: f64) -> String {
    format!("{:.1}%", v * 100.0)
}

impl EvalMatrix {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("train_restriction,eval_restriction,map,images,detections\n");
        for (tr, row) in self.train_restrictions.iter().zip(&self.cells) {
            for (er, cell) in self.eval_restrictions.iter().zip(row) {
                let _ = writeln!(out, "{tr},{er},{:.6},{},{}", cell.map, cell.images, cell.detections);
            }
        }
        out
    }

    /// Rows are training restrictions, columns evaluation restrictions.
    pub fn to_text(&self) -> String {
        let mut header = vec!["trained \\ evaluated".to_string()];
        header.extend(self.eval_restrictions.iter().map(|r| r.label()));
        let mut rows = vec![header];
        for (tr, row) in self.train_restrictions.iter().zip(&self.cells) {
            let mut r = vec![tr.label()];
            r.extend(row.iter().map(|c| pct(c.map)));
            rows.push(r);
        }
        align(&rows)
    }
}

impl EvalResult {
    /// One row per class plus the overall mean.
    pub fn to_csv(&self, class_names: &[&str]) -> String {
        let mut out = String::from("class,ap,ground_truth\n");
        for (i, (ap, n)) in self.per_class_ap.iter().zip(&self.ground_truth).enumerate() {
            let name = class_names.get(i).copied().unwrap_or("?");
            let ap = ap.map(|v| format!("{v:.6}")).unwrap_or_default();
            let _ = writeln!(out, "{name},{ap},{n}");
        }
        let _ = writeln!(out, "overall,{:.6},{}", self.map, self.ground_truth.iter().sum::<usize>());
        out
    }

    pub fn to_text(&self, class_names: &[&str]) -> String {
        let mut rows = vec![vec!["class".to_string(), "AP".into(), "GT".into()]];
        for (i, (ap, n)) in self.per_class_ap.iter().zip(&self.ground_truth).enumerate() {
            let name = class_names.get(i).map(|s| s.to_string()).unwrap_or_else(|| format!("class {i}"));
            rows.push(vec![name, ap.map(pct).unwrap_or_else(|| "n/a".into()), n.to_string()]);
        }
        rows.push(vec!["overall".into(), pct(self.map), self.ground_truth.iter().sum::<usize>().to_string()]);
        let mut text = align(&rows);
        let _ = writeln!(
            text,
            "images {}  detections {}  IoU {}  restriction {}",
            self.images,
            self.detections,
            self.iou_threshold,
            self.max_objects.label()
        );
        text
    }
}

pub(crate) fn align(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in rows {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, s)| {
                if c == 0 {
                    format!("{s:<w$}", w = widths[c])
                } else {
                    format!("{s:>w$}", w = widths[c])
                }
            })
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}
