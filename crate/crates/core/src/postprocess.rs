//! Detection post-processing: overlap resolution, line extension and
//! reading-order sorting.

use std::cmp::Ordering;
use std::f64::consts::FRAC_PI_4;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{iou, AxisBox, GeometryError, OrientedBox, Point};

/// Lines inclined this much or more are not treated as text lines.
pub const MAX_LINE_ANGLE: f64 = FRAC_PI_4;

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection<B> {
    #[serde(rename = "box")]
    pub bbox: B,
    pub confidence: f64,
    #[serde(default)]
    pub class_id: u32,
}

impl<B> Detection<B> {
    pub fn new(bbox: B, confidence: f64) -> Self {
        Self { bbox, confidence, class_id: 0 }
    }
}

/// Shapes that can be compared through an axis-aligned envelope.
pub trait Envelope {
    fn envelope_box(&self) -> AxisBox;
}

impl Envelope for AxisBox {
    fn envelope_box(&self) -> AxisBox {
        *self
    }
}

impl Envelope for OrientedBox {
    /// Unclamped, so boxes outside the unit square still compare sensibly.
    fn envelope_box(&self) -> AxisBox {
        self.bounding_rect()
    }
}

/// Greedy suppression: visit detections by descending confidence (earlier
/// input first on ties) and keep one only if its IoU with every kept
/// detection stays below `iou_threshold`. Kept detections are returned in
/// visiting order.
pub fn resolve_by_confidence<B: Envelope + Clone>(
    dets: &[Detection<B>],
    iou_threshold: f64,
) -> Vec<Detection<B>> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .confidence
            .total_cmp(&dets[a].confidence)
            .then(a.cmp(&b))
    });
    let mut kept: Vec<(usize, AxisBox)> = Vec::new();
    for i in order {
        let env = dets[i].bbox.envelope_box();
        if kept.iter().all(|(_, k)| iou(&env, k) < iou_threshold) {
            kept.push((i, env));
        }
    }
    kept.into_iter().map(|(i, _)| dets[i].clone()).collect()
}

/// Merges overlapping word boxes: while some pair reaches `iou_threshold`,
/// the pair with the highest IoU (lowest indices on ties) is replaced by
/// the smallest box covering both, carrying the higher confidence. The
/// result is sorted left to right.
pub fn resolve_by_union(dets: &[Detection<AxisBox>], iou_threshold: f64) -> Vec<Detection<AxisBox>> {
    let mut boxes: Vec<Detection<AxisBox>> = dets.to_vec();
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..boxes.len() {
            for j in i + 1..boxes.len() {
                let v = iou(&boxes[i].bbox, &boxes[j].bbox);
                if v >= iou_threshold && best.is_none_or(|(b, _, _)| v > b) {
                    best = Some((v, i, j));
                }
            }
        }
        let Some((_, i, j)) = best else { break };
        let b = boxes.remove(j);
        let a = &mut boxes[i];
        if b.confidence > a.confidence {
            a.class_id = b.class_id;
        }
        a.bbox = a.bbox.union(&b.bbox);
        a.confidence = a.confidence.max(b.confidence);
    }
    sort_words(&boxes)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExtendError {
    #[error("line inclined by {angle:.4} rad exceeds the {limit:.4} rad limit")]
    TooSteep { angle: f64, limit: f64 },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Extends a line box to the left and right image borders along its mean
/// inclination. Each corner moves along a line of slope `tan(angle)`; the
/// resulting y values are clamped to `[0, 1]`.
pub fn extend_line(l: &OrientedBox) -> Result<OrientedBox, ExtendError> {
    let angle = l.angle().radians();
    if angle.abs() >= MAX_LINE_ANGLE {
        return Err(ExtendError::TooSteep { angle, limit: MAX_LINE_ANGLE });
    }
    let s = angle.tan();
    let to_left = |p: Point| Point::new(0.0, (p.y - s * p.x).clamp(0.0, 1.0));
    let to_right = |p: Point| Point::new(1.0, (p.y + s * (1.0 - p.x)).clamp(0.0, 1.0));
    Ok(OrientedBox::new([
        to_left(l.top_left()),
        to_right(l.top_right()),
        to_right(l.bottom_right()),
        to_left(l.bottom_left()),
    ])?)
}

fn by_coords(a: (f64, f64), b: (f64, f64)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1))
}

/// Top to bottom by centroid y, then left to right.
pub fn sort_lines(dets: &[Detection<OrientedBox>]) -> Vec<Detection<OrientedBox>> {
    let mut out = dets.to_vec();
    out.sort_by(|a, b| {
        let (ca, cb) = (a.bbox.centroid(), b.bbox.centroid());
        by_coords((ca.y, ca.x), (cb.y, cb.x))
    });
    out
}

/// Left to right by center x, then top to bottom.
pub fn sort_words(dets: &[Detection<AxisBox>]) -> Vec<Detection<AxisBox>> {
    let mut out = dets.to_vec();
    out.sort_by(|a, b| by_coords((a.bbox.cx, a.bbox.cy), (b.bbox.cx, b.bbox.cy)));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(cx: f64, cy: f64, w: f64, h: f64, c: f64) -> Detection<AxisBox> {
        Detection::new(AxisBox::new(cx, cy, w, h).unwrap(), c)
    }

    #[test]
    fn confidence_keeps_the_stronger_box() {
        // IoU = 0.5: overlap 2/3 of the width
        let a = det(0.3, 0.5, 0.3, 0.1, 0.7);
        let b = det(0.3 + 0.1, 0.5, 0.3, 0.1, 0.9);
        assert!((iou(&a.bbox, &b.bbox) - 0.5).abs() < 1e-12);
        let out = resolve_by_confidence(&[a, b], 0.4);
        assert_eq!(out, vec![b]);
    }

    #[test]
    fn confidence_keeps_weak_overlaps() {
        let a = det(0.3, 0.5, 0.2, 0.1, 0.7);
        let b = det(0.3 + 0.2 * (1.0 - 0.6 / 1.3), 0.5, 0.2, 0.1, 0.9);
        assert!((iou(&a.bbox, &b.bbox) - 0.3).abs() < 1e-9);
        assert_eq!(resolve_by_confidence(&[a, b], 0.4).len(), 2);
    }

    #[test]
    fn confidence_three_way() {
        let dets = [
            det(0.50, 0.5, 0.2, 0.2, 0.6),
            det(0.51, 0.5, 0.2, 0.2, 0.8),
            det(0.52, 0.5, 0.2, 0.2, 0.7),
        ];
        assert_eq!(resolve_by_confidence(&dets, 0.4), vec![dets[1]]);
    }

    #[test]
    fn confidence_ties_prefer_earlier() {
        let dets = [det(0.5, 0.5, 0.2, 0.2, 0.8), det(0.51, 0.5, 0.2, 0.2, 0.8)];
        assert_eq!(resolve_by_confidence(&dets, 0.4), vec![dets[0]]);
    }

    #[test]
    fn oriented_detections_use_envelopes() {
        let l1 = OrientedBox::from_coords([0.1, 0.1, 0.9, 0.12, 0.9, 0.17, 0.1, 0.15]).unwrap();
        let l2 = OrientedBox::from_coords([0.1, 0.11, 0.9, 0.13, 0.9, 0.18, 0.1, 0.16]).unwrap();
        let dets = [Detection::new(l1, 0.5), Detection::new(l2, 0.6)];
        let out = resolve_by_confidence(&dets, 0.4);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].bbox, l2);
    }

    #[test]
    fn union_merges_overlaps() {
        let a = det(0.30, 0.5, 0.2, 0.1, 0.6);
        let b = det(0.33, 0.5, 0.2, 0.1, 0.9);
        let out = resolve_by_union(&[a, b], 0.4);
        assert_eq!(out.len(), 1);
        assert!((out[0].bbox.left() - 0.2).abs() < 1e-12);
        assert!((out[0].bbox.right() - 0.43).abs() < 1e-12);
        assert_eq!(out[0].confidence, 0.9);
    }

    #[test]
    fn union_leaves_disjoint_boxes() {
        let dets = [det(0.7, 0.5, 0.1, 0.1, 0.5), det(0.2, 0.5, 0.1, 0.1, 0.9)];
        let out = resolve_by_union(&dets, 0.4);
        assert_eq!(out, vec![dets[1], dets[0]]);
    }

    #[test]
    fn union_chain_reaches_fixpoint() {
        // a~b and b~c overlap strongly; a and c barely touch
        let dets = [
            det(0.30, 0.5, 0.2, 0.1, 0.5),
            det(0.36, 0.5, 0.2, 0.1, 0.6),
            det(0.42, 0.5, 0.2, 0.1, 0.7),
        ];
        let out = resolve_by_union(&dets, 0.4);
        assert_eq!(out.len(), 1);
        for d in &dets {
            assert!(out[0].bbox.contains(&d.bbox, 1e-12));
        }
        assert_eq!(resolve_by_union(&out, 0.4), out);
    }

    #[test]
    fn extend_horizontal() {
        let full = OrientedBox::from_coords([0.0, 0.1, 1.0, 0.1, 1.0, 0.2, 0.0, 0.2]).unwrap();
        assert_eq!(extend_line(&full).unwrap(), full);
        let mid = OrientedBox::from_coords([0.2, 0.1, 0.8, 0.1, 0.8, 0.2, 0.2, 0.2]).unwrap();
        assert_eq!(extend_line(&mid).unwrap(), full);
    }

    #[test]
    fn extend_sloped() {
        // slope 0.1 on both edges
        let l = OrientedBox::from_coords([0.2, 0.30, 0.6, 0.34, 0.6, 0.44, 0.2, 0.40]).unwrap();
        assert!((l.angle().radians().tan() - 0.1).abs() < 1e-12);
        let e = extend_line(&l).unwrap();
        assert_eq!(e.top_left().x, 0.0);
        assert!((e.top_left().y - 0.28).abs() < 1e-12);
        assert!((e.top_right().y - 0.38).abs() < 1e-12);
        assert!((e.angle().radians() - l.angle().radians()).abs() < 1e-12);
    }

    #[test]
    fn extend_rejects_steep_lines() {
        let steep = OrientedBox::from_coords([0.1, 0.1, 0.3, 0.35, 0.3, 0.45, 0.1, 0.2]).unwrap();
        assert!(matches!(extend_line(&steep), Err(ExtendError::TooSteep { .. })));
    }

    #[test]
    fn sorting() {
        let line = |y: f64| {
            Detection::new(
                OrientedBox::from_axis(&AxisBox::new(0.5, y, 0.8, 0.05).unwrap()),
                0.9,
            )
        };
        let sorted = vec![line(0.1), line(0.3), line(0.5)];
        assert_eq!(sort_lines(&sorted), sorted);
        let rev: Vec<_> = sorted.iter().rev().cloned().collect();
        assert_eq!(sort_lines(&rev), sorted);

        let a = det(0.3, 0.6, 0.1, 0.1, 0.5);
        let b = det(0.3, 0.4, 0.1, 0.1, 0.5);
        let c = det(0.1, 0.9, 0.1, 0.1, 0.5);
        assert_eq!(sort_words(&[a, b, c]), vec![c, b, a]);
    }
}
