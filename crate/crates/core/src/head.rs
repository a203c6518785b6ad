//! YOLO grid head: target encoding, the sum-squared detection loss with its
//! gradient, decoding back to boxes, IoU and per-class NMS.
//!
//! Head output layout, per cell in row-major order (`cell = row * S + col`):
//! `B × [x, y, w, h, conf]` followed by `C` class scores. `x, y` are relative
//! to the cell, `w, h` to the whole image.

use std::cmp::Ordering;

use crate::config::{HeadSpec, BOX_VALUES};
use crate::error::{Error, Result};

/// Axis-aligned box in normalized center-size image coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub cx: f32,
    pub cy: f32,
    pub w: f32,
    pub h: f32,
}

impl BBox {
    /// Validated constructor: `0 ≤ cx, cy ≤ 1`, `0 < w, h ≤ 1`.
    pub fn new(cx: f32, cy: f32, w: f32, h: f32) -> Result<Self> {
        let b = Self { cx, cy, w, h };
        if b.is_valid() {
            Ok(b)
        } else {
            Err(Error::InvalidArgument(format!(
                "box (cx={cx}, cy={cy}, w={w}, h={h}) outside the unit image"
            )))
        }
    }

    pub fn is_valid(&self) -> bool {
        let unit = |v: f32| (0.0..=1.0).contains(&v);
        unit(self.cx) && unit(self.cy) && self.w > 0.0 && self.w <= 1.0 && self.h > 0.0 && self.h <= 1.0
    }

    /// Builds a box from pixel corners in a `width x height` image.
    pub fn from_corners(x0: f32, y0: f32, x1: f32, y1: f32, width: f32, height: f32) -> Self {
        Self {
            cx: (x0 + x1) / 2.0 / width,
            cy: (y0 + y1) / 2.0 / height,
            w: (x1 - x0) / width,
            h: (y1 - y0) / height,
        }
    }

    pub fn area(&self) -> f32 {
        self.w.max(0.0) * self.h.max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruth {
    pub bbox: BBox,
    pub class_id: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub class_id: usize,
    pub score: f32,
}

/// Intersection over union; 0 for disjoint or degenerate boxes.
pub fn iou(a: &BBox, b: &BBox) -> f32 {
    iou_f64(
        [a.cx as f64, a.cy as f64, a.w as f64, a.h as f64],
        [b.cx as f64, b.cy as f64, b.w as f64, b.h as f64],
    ) as f32
}

fn iou_f64(a: [f64; 4], b: [f64; 4]) -> f64 {
    let (aw, ah) = (a[2].max(0.0), a[3].max(0.0));
    let (bw, bh) = (b[2].max(0.0), b[3].max(0.0));
    let iw = ((a[0] + aw / 2.0).min(b[0] + bw / 2.0) - (a[0] - aw / 2.0).max(b[0] - bw / 2.0)).max(0.0);
    let ih = ((a[1] + ah / 2.0).min(b[1] + bh / 2.0) - (a[1] - ah / 2.0).max(b[1] - bh / 2.0)).max(0.0);
    let inter = iw * ih;
    let union = aw * ah + bw * bh - inter;
    if union > 0.0 {
        (inter / union).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// IoU of `a` against a fixed `b`, with the partial derivatives with respect
/// to `a`'s `[cx, cy, w, h]`. Widths and heights at or below zero contribute
/// zero derivative.
fn iou_with_grad(a: [f64; 4], b: [f64; 4]) -> (f64, [f64; 4]) {
    let (aw, ah) = (a[2].max(0.0), a[3].max(0.0));
    let (bw, bh) = (b[2], b[3]);
    let (dw_on, dh_on) = (a[2] > 0.0, a[3] > 0.0);

    // one axis: overlap length and its derivative w.r.t. (centre, size)
    let overlap = |ac: f64, asz: f64, bc: f64, bsz: f64| -> (f64, f64, f64) {
        let (a1, a2) = (ac - asz / 2.0, ac + asz / 2.0);
        let (b1, b2) = (bc - bsz / 2.0, bc + bsz / 2.0);
        let len = a2.min(b2) - a1.max(b1);
        if len <= 0.0 {
            return (0.0, 0.0, 0.0);
        }
        let (mut dc, mut ds) = (0.0, 0.0);
        if a2 < b2 {
            dc += 1.0;
            ds += 0.5;
        }
        if a1 > b1 {
            dc -= 1.0;
            ds += 0.5;
        }
        (len, dc, ds)
    };
    let (iw, diw_dc, diw_dw) = overlap(a[0], aw, b[0], bw);
    let (ih, dih_dc, dih_dh) = overlap(a[1], ah, b[1], bh);

    let inter = iw * ih;
    let area = aw * ah;
    let union = area + bw * bh - inter;
    if union <= 0.0 || inter <= 0.0 {
        return (0.0, [0.0; 4]);
    }
    let u = inter / union;
    let d_inter = [
        diw_dc * ih,
        dih_dc * iw,
        if dw_on { diw_dw * ih } else { 0.0 },
        if dh_on { dih_dh * iw } else { 0.0 },
    ];
    let d_area = [0.0, 0.0, if dw_on { ah } else { 0.0 }, if dh_on { aw } else { 0.0 }];
    let mut grad = [0.0; 4];
    for k in 0..4 {
        let d_union = d_area[k] - d_inter[k];
        grad[k] = d_inter[k] / union - inter * d_union / (union * union);
    }
    (u, grad)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellTarget {
    /// Centre relative to the cell.
    pub x: f32,
    pub y: f32,
    /// Size relative to the image.
    pub w: f32,
    pub h: f32,
    pub class_id: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridTarget {
    pub grid: usize,
    pub classes: usize,
    pub cells: Vec<Option<CellTarget>>,
}

impl GridTarget {
    pub fn objects(&self) -> usize {
        self.cells.iter().filter(|c| c.is_some()).count()
    }
}

/// Grid cell holding a normalized coordinate, using half-open intervals
/// `[i/S, (i+1)/S)`; a coordinate of exactly 1.0 lands in the last cell.
fn cell_index(v: f32, grid: usize) -> usize {
    ((v * grid as f32).floor().max(0.0) as usize).min(grid - 1)
}

/// Assigns each box to the cell containing its centre. When two centres share
/// a cell the earlier box wins.
pub fn encode_targets(boxes: &[GroundTruth], grid: usize, classes: usize) -> GridTarget {
    let mut cells = vec![None; grid * grid];
    for gt in boxes {
        debug_assert!(gt.class_id < classes);
        let b = gt.bbox;
        let (col, row) = (cell_index(b.cx, grid), cell_index(b.cy, grid));
        let slot = &mut cells[row * grid + col];
        if slot.is_none() {
            *slot = Some(CellTarget {
                x: b.cx * grid as f32 - col as f32,
                y: b.cy * grid as f32 - row as f32,
                w: b.w,
                h: b.h,
                class_id: gt.class_id,
            });
        }
    }
    GridTarget { grid, classes, cells }
}

/// Treatment of a non-positive predicted `w` or `h` in the square-root
/// size term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NegativeSize {
    /// `(√t − v)²` below zero: same value at `v = 0`, and the gradient
    /// pushes the prediction back up.
    #[default]
    Quadratic,
    /// `√max(v, 0)` with zero gradient below zero. A size that goes
    /// negative never gets a size gradient again.
    Clamp,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub coord: f32,
    pub noobj: f32,
    pub negative_size: NegativeSize,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            coord: 5.0,
            noobj: 0.5,
            negative_size: NegativeSize::default(),
        }
    }
}

/// Sum-squared YOLO loss and its exact gradient with respect to `pred`.
///
/// In a cell holding an object, the predictor with the highest IoU against
/// the target (lowest index on ties) is responsible: it pays the coordinate
/// terms (with square roots on `w, h`) and regresses its confidence onto that
/// IoU. The IoU is part of the loss, so the gradient flows through it too.
/// All other predictors regress confidence to 0 with weight `noobj`; class
/// scores regress onto the one-hot label in object cells only.
pub fn yolo_loss(pred: &[f32], target: &GridTarget, head: HeadSpec, weights: LossWeights) -> Result<(f64, Vec<f32>)> {
    if pred.len() != head.output_len() || target.grid != head.grid || target.classes != head.classes {
        return Err(Error::shape(
            "yolo_loss",
            format!(
                "prediction of {} values / target {}x{} with {} classes vs head {head:?}",
                pred.len(),
                target.grid,
                target.grid,
                target.classes
            ),
        ));
    }
    let s = head.grid;
    let cell_len = head.cell_len();
    let (l_coord, l_noobj) = (weights.coord as f64, weights.noobj as f64);
    let mut loss = 0.0f64;
    let mut grad = vec![0.0f64; pred.len()];

    for (cell, tgt) in target.cells.iter().enumerate() {
        let base = cell * cell_len;
        let p = |i: usize| pred[base + i] as f64;
        let Some(t) = tgt else {
            for b in 0..head.boxes {
                let ci = b * BOX_VALUES + 4;
                loss += l_noobj * p(ci) * p(ci);
                grad[base + ci] += 2.0 * l_noobj * p(ci);
            }
            continue;
        };

        let (row, col) = (cell / s, cell % s);
        let to_image = |x: f64, y: f64, w: f64, h: f64| [(col as f64 + x) / s as f64, (row as f64 + y) / s as f64, w, h];
        let target_box = to_image(t.x as f64, t.y as f64, t.w as f64, t.h as f64);

        let mut best = 0usize;
        let mut best_iou = f64::NEG_INFINITY;
        let mut ious = Vec::with_capacity(head.boxes);
        for b in 0..head.boxes {
            let o = b * BOX_VALUES;
            let r = iou_with_grad(to_image(p(o), p(o + 1), p(o + 2), p(o + 3)), target_box);
            if r.0 > best_iou {
                best_iou = r.0;
                best = b;
            }
            ious.push(r);
        }

        for b in 0..head.boxes {
            let o = b * BOX_VALUES;
            let conf = p(o + 4);
            if b != best {
                loss += l_noobj * conf * conf;
                grad[base + o + 4] += 2.0 * l_noobj * conf;
                continue;
            }
            let (dx, dy) = (p(o) - t.x as f64, p(o + 1) - t.y as f64);
            loss += l_coord * (dx * dx + dy * dy);
            grad[base + o] += 2.0 * l_coord * dx;
            grad[base + o + 1] += 2.0 * l_coord * dy;

            for (k, tv) in [(2usize, t.w), (3, t.h)] {
                let v = p(o + k);
                let target_root = (tv as f64).sqrt();
                if v > 0.0 {
                    let root = v.sqrt();
                    let diff = root - target_root;
                    loss += l_coord * diff * diff;
                    grad[base + o + k] += l_coord * diff / root;
                } else {
                    match weights.negative_size {
                        NegativeSize::Quadratic => {
                            let diff = v - target_root;
                            loss += l_coord * diff * diff;
                            grad[base + o + k] += 2.0 * l_coord * diff;
                        }
                        NegativeSize::Clamp => loss += l_coord * tv as f64,
                    }
                }
            }

            let (u, du) = ious[b];
            let diff = conf - u;
            loss += diff * diff;
            grad[base + o + 4] += 2.0 * diff;
            // chain through the IoU; x, y enter the image-space centre as /S
            let scale = [1.0 / s as f64, 1.0 / s as f64, 1.0, 1.0];
            for k in 0..4 {
                grad[base + o + k] += -2.0 * diff * du[k] * scale[k];
            }
        }

        let cls_base = head.boxes * BOX_VALUES;
        for c in 0..head.classes {
            let want = if c == t.class_id { 1.0 } else { 0.0 };
            let diff = p(cls_base + c) - want;
            loss += diff * diff;
            grad[base + cls_base + c] += 2.0 * diff;
        }
    }

    if !loss.is_finite() {
        return Err(Error::NonFinite("yolo_loss"));
    }
    Ok((loss, grad.into_iter().map(|g| g as f32).collect()))
}

/// Turns a head output into detections: per predictor, score is confidence
/// times the best class score; coordinates are mapped to the image and
/// clamped to `[0, 1]`. Scores at or below zero are never emitted.
pub fn decode_predictions(out: &[f32], head: HeadSpec, conf_threshold: f32) -> Result<Vec<Detection>> {
    if out.len() != head.output_len() {
        return Err(Error::shape(
            "decode_predictions",
            format!("{} values for head {head:?}", out.len()),
        ));
    }
    if !(0.0..=1.0).contains(&conf_threshold) {
        return Err(Error::InvalidArgument(format!("confidence threshold {conf_threshold} not in [0, 1]")));
    }
    let s = head.grid;
    let mut dets = Vec::new();
    for (cell, values) in out.chunks_exact(head.cell_len()).enumerate() {
        let (row, col) = (cell / s, cell % s);
        let classes = &values[head.boxes * BOX_VALUES..];
        let (class_id, class_score) = classes
            .iter()
            .enumerate()
            .fold((0, f32::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best });
        for b in 0..head.boxes {
            let v = &values[b * BOX_VALUES..][..BOX_VALUES];
            let score = v[4] * class_score;
            if !(score > 0.0 && score >= conf_threshold) {
                continue;
            }
            dets.push(Detection {
                bbox: BBox {
                    cx: ((col as f32 + v[0]) / s as f32).clamp(0.0, 1.0),
                    cy: ((row as f32 + v[1]) / s as f32).clamp(0.0, 1.0),
                    w: v[2].clamp(0.0, 1.0),
                    h: v[3].clamp(0.0, 1.0),
                },
                class_id,
                score,
            });
        }
    }
    Ok(dets)
}

/// Indices ordered by descending score, then ascending position.
pub(crate) fn rank_by_score(scores: impl Iterator<Item = f32>) -> Vec<usize> {
    let scores: Vec<f32> = scores.collect();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

/// Greedy per-class non-maximum suppression. A detection is dropped when its
/// IoU with an already kept detection of the same class exceeds
/// `iou_threshold`. Survivors come out ordered by score, then input index.
pub fn nms(dets: &[Detection], iou_threshold: f32) -> Vec<Detection> {
    let mut kept: Vec<Detection> = Vec::new();
    for i in rank_by_score(dets.iter().map(|d| d.score)) {
        let d = dets[i];
        let suppressed = kept
            .iter()
            .any(|k| k.class_id == d.class_id && iou(&k.bbox, &d.bbox) > iou_threshold);
        if !suppressed {
            kept.push(d);
        }
    }
    kept
}

/// Head output that scores zero loss against `target`: coordinates copied,
/// responsible confidence 1, one-hot classes, everything else zero. The
/// first predictor in each object cell carries the box.
pub fn perfect_output(target: &GridTarget, head: HeadSpec) -> Vec<f32> {
    let mut out = vec![0.0f32; head.output_len()];
    for (cell, t) in target.cells.iter().enumerate() {
        if let Some(t) = t {
            let v = &mut out[cell * head.cell_len()..][..head.cell_len()];
            v[..5].copy_from_slice(&[t.x, t.y, t.w, t.h, 1.0]);
            v[head.boxes * BOX_VALUES + t.class_id] = 1.0;
        }
    }
    out
}
