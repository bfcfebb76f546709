//! Detection and recognition metrics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{iou, AxisBox};
use crate::lexicon::{levenshtein, Word};
use crate::postprocess::{Detection, Envelope};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("{preds} predictions but {gts} ground-truth words")]
    LengthMismatch { preds: usize, gts: usize },
    #[error("nothing to compare")]
    Empty,
    #[error("a confidence sweep needs at least 2 steps, got {0}")]
    Steps(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    pub pred: usize,
    pub gt: usize,
    pub iou: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub pairs: Vec<MatchPair>,
}

fn by_confidence<B>(preds: &[Detection<B>]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].confidence.total_cmp(&preds[a].confidence).then(a.cmp(&b)));
    order
}

/// Greedy matching: predictions by descending confidence (earlier first on
/// ties), each taking the unmatched ground truth with the highest IoU that
/// reaches `iou_threshold` (lower index on ties). Oriented predictions are
/// compared through their envelopes.
pub fn match_detections<B: Envelope>(preds: &[Detection<B>], gts: &[AxisBox], iou_threshold: f64) -> MatchResult {
    let mut taken = vec![false; gts.len()];
    let mut pairs = Vec::new();
    for p in by_confidence(preds) {
        let env = preds[p].bbox.envelope_box();
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] {
                continue;
            }
            let v = iou(&env, gt);
            if v >= iou_threshold && best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        if let Some((gt, iou)) = best {
            taken[gt] = true;
            pairs.push(MatchPair { pred: p, gt, iou });
        }
    }
    MatchResult {
        tp: pairs.len(),
        fp: preds.len() - pairs.len(),
        fn_: gts.len() - pairs.len(),
        pairs,
    }
}

/// Precision and recall with the conventions that make empty inputs total:
/// no predictions and nothing missed is perfect precision, no ground truth
/// is perfect recall.
pub fn precision_recall(m: &MatchResult) -> (f64, f64) {
    let p = if m.tp + m.fp > 0 {
        m.tp as f64 / (m.tp + m.fp) as f64
    } else if m.fn_ == 0 {
        1.0
    } else {
        0.0
    };
    let r = if m.tp + m.fn_ > 0 { m.tp as f64 / (m.tp + m.fn_) as f64 } else { 1.0 };
    (p, r)
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub confidence: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub points: Vec<CurvePoint>,
    /// The point with the highest F1 (lowest cutoff on ties).
    pub best: CurvePoint,
}

/// Precision, recall and F1 with predictions below each of `steps` evenly
/// spaced cutoffs in `[0, 1]` removed.
pub fn sweep_curves<B: Envelope + Clone>(
    preds: &[Detection<B>],
    gts: &[AxisBox],
    iou_threshold: f64,
    steps: usize,
) -> Result<Sweep, EvalError> {
    if steps < 2 {
        return Err(EvalError::Steps(steps));
    }
    let points: Vec<CurvePoint> = (0..steps)
        .map(|i| {
            let cutoff = i as f64 / (steps - 1) as f64;
            let kept: Vec<Detection<B>> = preds.iter().filter(|d| d.confidence >= cutoff).cloned().collect();
            let (precision, recall) = precision_recall(&match_detections(&kept, gts, iou_threshold));
            CurvePoint { confidence: cutoff, precision, recall, f1: f1(precision, recall) }
        })
        .collect();
    let best = *points
        .iter()
        .reduce(|a, b| if b.f1 > a.f1 { b } else { a })
        .expect("at least two points");
    Ok(Sweep { points, best })
}

/// Area under the precision-recall curve of the confidence-ranked
/// predictions, with precision made non-increasing (all-point
/// interpolation). Without ground truth the AP is 1 when there are no
/// predictions and 0 otherwise.
pub fn average_precision<B: Envelope>(preds: &[Detection<B>], gts: &[AxisBox], iou_threshold: f64) -> f64 {
    if gts.is_empty() {
        return if preds.is_empty() { 1.0 } else { 0.0 };
    }
    let m = match_detections(preds, gts, iou_threshold);
    let mut hit = vec![false; preds.len()];
    for p in &m.pairs {
        hit[p.pred] = true;
    }
    let mut precision = Vec::with_capacity(preds.len());
    let mut recall = Vec::with_capacity(preds.len());
    let mut tp = 0usize;
    for (rank, p) in by_confidence(preds).into_iter().enumerate() {
        tp += usize::from(hit[p]);
        precision.push(tp as f64 / (rank + 1) as f64);
        recall.push(tp as f64 / gts.len() as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, r) in precision.iter().zip(&recall) {
        ap += (r - prev_recall) * p;
        prev_recall = *r;
    }
    ap
}

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn coco_thresholds() -> [f64; 10] {
    std::array::from_fn(|i| 0.5 + 0.05 * i as f64)
}

/// `(AP at IoU 0.5, mean AP over IoU 0.50:0.95)`.
pub fn map_range<B: Envelope>(preds: &[Detection<B>], gts: &[AxisBox]) -> (f64, f64) {
    let aps: Vec<f64> = coco_thresholds()
        .iter()
        .map(|&t| average_precision(preds, gts, t))
        .collect();
    (aps[0], aps.iter().sum::<f64>() / aps.len() as f64)
}

/// The 2x2 detection confusion layout: rows are predicted object /
/// predicted background, columns ground-truth object / ground-truth
/// background. Background against background is undefined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "[[Option<usize>; 2]; 2]", from = "[[Option<usize>; 2]; 2]")]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl From<Confusion> for [[Option<usize>; 2]; 2] {
    fn from(c: Confusion) -> Self {
        [[Some(c.tp), Some(c.fp)], [Some(c.fn_), None]]
    }
}

impl From<[[Option<usize>; 2]; 2]> for Confusion {
    fn from(t: [[Option<usize>; 2]; 2]) -> Self {
        Confusion {
            tp: t[0][0].unwrap_or(0),
            fp: t[0][1].unwrap_or(0),
            fn_: t[1][0].unwrap_or(0),
        }
    }
}

pub fn confusion_counts(m: &MatchResult) -> Confusion {
    Confusion { tp: m.tp, fp: m.fp, fn_: m.fn_ }
}

/// Mean Levenshtein distance between paired words.
pub fn mean_string_distance(preds: &[Word], gts: &[Word]) -> Result<f64, EvalError> {
    if preds.len() != gts.len() {
        return Err(EvalError::LengthMismatch { preds: preds.len(), gts: gts.len() });
    }
    if preds.is_empty() {
        return Err(EvalError::Empty);
    }
    let total: usize = preds.iter().zip(gts).map(|(p, g)| levenshtein(p.as_str(), g.as_str())).sum();
    Ok(total as f64 / preds.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub predictions: usize,
    pub ground_truth: usize,
    pub precision: f64,
    pub recall: f64,
    pub map50: f64,
    pub map5095: f64,
    /// AP at the single IoU threshold 0.95.
    pub ap95: f64,
    pub confusion: Confusion,
    pub best_f1_confidence: f64,
    pub curve: Vec<CurvePoint>,
}

/// Detection metrics at `iou_threshold` plus the confidence sweep.
pub fn detection_report<B: Envelope + Clone>(
    preds: &[Detection<B>],
    gts: &[AxisBox],
    iou_threshold: f64,
    steps: usize,
) -> Result<DetectionReport, EvalError> {
    let m = match_detections(preds, gts, iou_threshold);
    let (precision, recall) = precision_recall(&m);
    let (map50, map5095) = map_range(preds, gts);
    let sweep = sweep_curves(preds, gts, iou_threshold, steps)?;
    Ok(DetectionReport {
        predictions: preds.len(),
        ground_truth: gts.len(),
        precision,
        recall,
        map50,
        map5095,
        ap95: average_precision(preds, gts, 0.95),
        confusion: confusion_counts(&m),
        best_f1_confidence: sweep.best.confidence,
        curve: sweep.points,
    })
}
