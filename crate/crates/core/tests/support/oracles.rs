//! Deliberately naive reference implementations.

use microyolo_core::head::{iou, Detection};

/// Stable descending sort by score.
fn ranked(tp: &[bool], scores: &[f32]) -> Vec<bool> {
    let mut idx: Vec<usize> = (0..tp.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    idx.into_iter().map(|i| tp[i]).collect()
}

/// Precision and recall at every cut-off `k = 1..=n`, computed from scratch.
fn pr_points(tp: &[bool], scores: &[f32], num_gt: usize) -> Vec<(f64, f64)> {
    let tp = ranked(tp, scores);
    (1..=tp.len())
        .map(|k| {
            let hits = tp[..k].iter().filter(|&&t| t).count() as f64;
            (hits / num_gt as f64, hits / k as f64)
        })
        .collect()
}

/// Interpolated precision: the best precision at any cut-off reaching `r`.
fn interpolated(points: &[(f64, f64)], r: f64) -> f64 {
    points.iter().filter(|(rec, _)| *rec >= r).map(|(_, p)| *p).fold(0.0, f64::max)
}

/// Area under the precision envelope, summed over the recall steps.
pub fn ap_all_point(tp: &[bool], scores: &[f32], num_gt: usize) -> f64 {
    let points = pr_points(tp, scores, num_gt);
    let mut recalls: Vec<f64> = points.iter().map(|p| p.0).collect();
    recalls.dedup();
    let mut ap = 0.0;
    let mut prev = 0.0;
    for r in recalls {
        ap += (r - prev) * interpolated(&points, r);
        prev = r;
    }
    ap
}

pub fn ap_eleven_point(tp: &[bool], scores: &[f32], num_gt: usize) -> f64 {
    let points = pr_points(tp, scores, num_gt);
    (0..=10).map(|t| interpolated(&points, t as f64 / 10.0)).sum::<f64>() / 11.0
}

/// Repeatedly takes the best remaining detection (lowest index on ties) and
/// deletes every same-class detection overlapping it by more than the
/// threshold.
pub fn nms(dets: &[Detection], iou_threshold: f32) -> Vec<Detection> {
    let mut remaining: Vec<(usize, Detection)> = dets.iter().copied().enumerate().collect();
    let mut kept = Vec::new();
    while !remaining.is_empty() {
        let mut best = 0;
        for (k, (i, d)) in remaining.iter().enumerate() {
            let (bi, bd) = remaining[best];
            if d.score > bd.score || (d.score == bd.score && *i < bi) {
                best = k;
            }
        }
        let (_, top) = remaining.remove(best);
        remaining.retain(|(_, d)| d.class_id != top.class_id || iou(&d.bbox, &top.bbox) <= iou_threshold);
        kept.push(top);
    }
    kept
}
