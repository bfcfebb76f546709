//! Axis-aligned and oriented boxes in image coordinates.
//!
//! Coordinates are y-down: `x` grows to the right, `y` grows towards the
//! bottom of the page. Annotation files use fractions of the page size, but
//! nothing here assumes a unit; the pipeline rescales boxes to pixels before
//! measuring angles so that rotations stay isotropic on non-square pages.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("non-finite coordinate")]
    NonFinite,
    #[error("box extents must be positive (w={w}, h={h})")]
    EmptyBox { w: f64, h: f64 },
    #[error("oriented box is degenerate (area {area})")]
    Degenerate { area: f64 },
    #[error("oriented box is not convex")]
    NotConvex,
    #[error("oriented box edges must run left to right")]
    EdgeOrder,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    /// Rotates `self` about `center`. A positive angle turns the +x axis
    /// towards +y, which is clockwise on screen.
    pub fn rotate_about(self, center: Point, angle: Angle) -> Point {
        let (sin, cos) = angle.0.sin_cos();
        let dx = self.x - center.x;
        let dy = self.y - center.y;
        Point {
            x: center.x + cos * dx - sin * dy,
            y: center.y + sin * dx + cos * dy,
        }
    }

    fn sub(self, other: Point) -> Point {
        Point::new(self.x - other.x, self.y - other.y)
    }

    fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

fn cross(a: Point, b: Point) -> f64 {
    a.x * b.y - a.y * b.x
}

/// An angle in radians.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct Angle(pub f64);

impl Angle {
    pub const ZERO: Angle = Angle(0.0);

    pub fn radians(self) -> f64 {
        self.0
    }

    pub fn from_degrees(deg: f64) -> Self {
        Angle(deg.to_radians())
    }
}

impl std::ops::Neg for Angle {
    type Output = Angle;
    fn neg(self) -> Angle {
        Angle(-self.0)
    }
}

/// Rectangle with sides parallel to the image axes, stored as center and extents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl AxisBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self, GeometryError> {
        if !(cx.is_finite() && cy.is_finite() && w.is_finite() && h.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(GeometryError::EmptyBox { w, h });
        }
        Ok(Self { cx, cy, w, h })
    }

    pub fn from_extents(left: f64, top: f64, right: f64, bottom: f64) -> Result<Self, GeometryError> {
        Self::new(
            (left + right) / 2.0,
            (top + bottom) / 2.0,
            right - left,
            bottom - top,
        )
    }

    pub fn left(&self) -> f64 {
        self.cx - self.w / 2.0
    }

    pub fn right(&self) -> f64 {
        self.cx + self.w / 2.0
    }

    pub fn top(&self) -> f64 {
        self.cy - self.h / 2.0
    }

    pub fn bottom(&self) -> f64 {
        self.cy + self.h / 2.0
    }

    pub fn center(&self) -> Point {
        Point::new(self.cx, self.cy)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Corners in top-left, top-right, bottom-right, bottom-left order.
    pub fn corners(&self) -> [Point; 4] {
        let (l, t, r, b) = (self.left(), self.top(), self.right(), self.bottom());
        [Point::new(l, t), Point::new(r, t), Point::new(r, b), Point::new(l, b)]
    }

    pub fn contains(&self, other: &AxisBox, tolerance: f64) -> bool {
        other.left() >= self.left() - tolerance
            && other.right() <= self.right() + tolerance
            && other.top() >= self.top() - tolerance
            && other.bottom() <= self.bottom() + tolerance
    }

    /// Smallest box containing both.
    pub fn union(&self, other: &AxisBox) -> AxisBox {
        AxisBox::from_extents(
            self.left().min(other.left()),
            self.top().min(other.top()),
            self.right().max(other.right()),
            self.bottom().max(other.bottom()),
        )
        .expect("union of valid boxes is non-empty")
    }

    pub fn translate(&self, dx: f64, dy: f64) -> AxisBox {
        AxisBox { cx: self.cx + dx, cy: self.cy + dy, ..*self }
    }

    pub fn scale(&self, sx: f64, sy: f64) -> AxisBox {
        AxisBox {
            cx: self.cx * sx,
            cy: self.cy * sy,
            w: self.w * sx,
            h: self.h * sy,
        }
    }
}

/// Convex quadrilateral given by its corners in top-left, top-right,
/// bottom-right, bottom-left order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[Point; 4]", into = "[Point; 4]")]
pub struct OrientedBox {
    corners: [Point; 4],
}

impl TryFrom<[Point; 4]> for OrientedBox {
    type Error = GeometryError;
    fn try_from(corners: [Point; 4]) -> Result<Self, GeometryError> {
        OrientedBox::new(corners)
    }
}

impl From<OrientedBox> for [Point; 4] {
    fn from(b: OrientedBox) -> Self {
        b.corners
    }
}

impl OrientedBox {
    pub fn new(corners: [Point; 4]) -> Result<Self, GeometryError> {
        if !corners.iter().all(|p| p.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let area = shoelace(&corners);
        if area <= 0.0 {
            return Err(GeometryError::Degenerate { area });
        }
        for i in 0..4 {
            let a = corners[i];
            let b = corners[(i + 1) % 4];
            let c = corners[(i + 2) % 4];
            if cross(b.sub(a), c.sub(b)) <= 0.0 {
                return Err(GeometryError::NotConvex);
            }
        }
        let [tl, tr, br, bl] = corners;
        if tl.x >= tr.x || bl.x >= br.x {
            return Err(GeometryError::EdgeOrder);
        }
        Ok(Self { corners })
    }

    /// Parses the 8-number form `x1 y1 x2 y2 x3 y3 x4 y4`.
    pub fn from_coords(c: [f64; 8]) -> Result<Self, GeometryError> {
        Self::new([
            Point::new(c[0], c[1]),
            Point::new(c[2], c[3]),
            Point::new(c[4], c[5]),
            Point::new(c[6], c[7]),
        ])
    }

    pub fn from_axis(b: &AxisBox) -> Self {
        Self::new(b.corners()).expect("axis box corners form a valid quad")
    }

    pub fn corners(&self) -> &[Point; 4] {
        &self.corners
    }

    pub fn coords(&self) -> [f64; 8] {
        let mut out = [0.0; 8];
        for (i, p) in self.corners.iter().enumerate() {
            out[2 * i] = p.x;
            out[2 * i + 1] = p.y;
        }
        out
    }

    pub fn top_left(&self) -> Point {
        self.corners[0]
    }
    pub fn top_right(&self) -> Point {
        self.corners[1]
    }
    pub fn bottom_right(&self) -> Point {
        self.corners[2]
    }
    pub fn bottom_left(&self) -> Point {
        self.corners[3]
    }

    /// Shoelace area; strictly positive for every constructed box.
    pub fn area(&self) -> f64 {
        shoelace(&self.corners)
    }

    pub fn centroid(&self) -> Point {
        let sx: f64 = self.corners.iter().map(|p| p.x).sum();
        let sy: f64 = self.corners.iter().map(|p| p.y).sum();
        Point::new(sx / 4.0, sy / 4.0)
    }

    /// Inclination of the mean of the top and bottom edge vectors.
    ///
    /// Both edges run left to right, so the summed x component is positive
    /// and the result lies strictly inside (-π/2, π/2).
    pub fn angle(&self) -> Angle {
        let top = self.top_right().sub(self.top_left());
        let bottom = self.bottom_right().sub(self.bottom_left());
        Angle((top.y + bottom.y).atan2(top.x + bottom.x))
    }

    /// Bounding rectangle of the corners, clamped to the unit square.
    ///
    /// Fails when the clamped rectangle is empty, i.e. the box lies
    /// completely outside the page.
    pub fn envelope(&self) -> Result<AxisBox, GeometryError> {
        let raw = self.bounding_rect();
        AxisBox::from_extents(
            raw.left().clamp(0.0, 1.0),
            raw.top().clamp(0.0, 1.0),
            raw.right().clamp(0.0, 1.0),
            raw.bottom().clamp(0.0, 1.0),
        )
    }

    /// Bounding rectangle of the corners without clamping.
    pub fn bounding_rect(&self) -> AxisBox {
        let xs = self.corners.map(|p| p.x);
        let ys = self.corners.map(|p| p.y);
        let min = |v: [f64; 4]| v.into_iter().fold(f64::INFINITY, f64::min);
        let max = |v: [f64; 4]| v.into_iter().fold(f64::NEG_INFINITY, f64::max);
        AxisBox::from_extents(min(xs), min(ys), max(xs), max(ys))
            .expect("a valid quad has a non-empty bounding rect")
    }

    pub fn map(&self, f: impl Fn(Point) -> Point) -> Result<OrientedBox, GeometryError> {
        OrientedBox::new(self.corners.map(f))
    }

    pub fn scale(&self, sx: f64, sy: f64) -> OrientedBox {
        self.map(|p| Point::new(p.x * sx, p.y * sy))
            .expect("positive scaling preserves validity")
    }

    pub fn contains_point(&self, p: Point) -> bool {
        (0..4).all(|i| {
            let a = self.corners[i];
            let b = self.corners[(i + 1) % 4];
            cross(b.sub(a), p.sub(a)) >= 0.0
        })
    }
}

fn shoelace(pts: &[Point]) -> f64 {
    let n = pts.len();
    let twice: f64 = (0..n)
        .map(|i| {
            let a = pts[i];
            let b = pts[(i + 1) % n];
            a.x * b.y - b.x * a.y
        })
        .sum();
    twice / 2.0
}

pub fn intersection_area(a: &AxisBox, b: &AxisBox) -> f64 {
    let w = a.right().min(b.right()) - a.left().max(b.left());
    let h = a.bottom().min(b.bottom()) - a.top().max(b.top());
    if w <= 0.0 || h <= 0.0 {
        0.0
    } else {
        w * h
    }
}

/// Intersection over union; 1 for identical boxes, 0 for disjoint ones.
pub fn iou(a: &AxisBox, b: &AxisBox) -> f64 {
    if a == b {
        return 1.0;
    }
    let inter = intersection_area(a, b);
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Area of `word ∩ line`, computed by clipping the rectangle against each
/// edge half-plane of the (convex) oriented box.
pub fn clip_area(word: &AxisBox, line: &OrientedBox) -> f64 {
    let mut poly: Vec<Point> = word.corners().to_vec();
    let quad = line.corners();
    for i in 0..4 {
        if poly.is_empty() {
            return 0.0;
        }
        let a = quad[i];
        let edge = quad[(i + 1) % 4].sub(a);
        let side = |p: Point| cross(edge, p.sub(a));
        let mut next = Vec::with_capacity(poly.len() + 2);
        for j in 0..poly.len() {
            let cur = poly[j];
            let prev = poly[(j + poly.len() - 1) % poly.len()];
            let (sc, sp) = (side(cur), side(prev));
            if sc >= 0.0 {
                if sp < 0.0 {
                    next.push(edge_crossing(prev, cur, sp, sc));
                }
                next.push(cur);
            } else if sp >= 0.0 {
                next.push(edge_crossing(prev, cur, sp, sc));
            }
        }
        poly = next;
    }
    if poly.len() < 3 {
        return 0.0;
    }
    shoelace(&poly).max(0.0)
}

fn edge_crossing(p: Point, q: Point, sp: f64, sq: f64) -> Point {
    let t = sp / (sp - sq);
    Point::new(p.x + t * (q.x - p.x), p.y + t * (q.y - p.y))
}

/// Fraction of the word box covered by the line box.
pub fn membership_ratio(word: &AxisBox, line: &OrientedBox) -> f64 {
    (clip_area(word, line) / word.area()).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    fn ab(cx: f64, cy: f64, w: f64, h: f64) -> AxisBox {
        AxisBox::new(cx, cy, w, h).unwrap()
    }

    fn diamond() -> OrientedBox {
        // square rotated 45 degrees, diagonal 1, centered at (0.5, 0.5)
        OrientedBox::new([
            Point::new(0.5, 0.0),
            Point::new(1.0, 0.5),
            Point::new(0.5, 1.0),
            Point::new(0.0, 0.5),
        ])
        .unwrap()
    }

    #[test]
    fn axis_area() {
        assert_eq!(ab(0.5, 0.5, 1.0, 1.0).area(), 1.0);
        assert!((ab(0.3, 0.5, 0.2, 0.2).area() - 0.04).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_boxes() {
        assert!(AxisBox::new(0.5, 0.5, 0.0, 0.1).is_err());
        assert!(AxisBox::new(f64::NAN, 0.5, 0.1, 0.1).is_err());
        // bow-tie
        let bowtie = OrientedBox::from_coords([0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 1.0]);
        assert!(bowtie.is_err());
        // counter-clockwise order has negative area
        let reversed = OrientedBox::from_coords([0.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
        assert!(matches!(reversed, Err(GeometryError::Degenerate { .. })));
        let flat = OrientedBox::from_coords([0.0, 0.5, 1.0, 0.5, 1.0, 0.5, 0.0, 0.5]);
        assert!(matches!(flat, Err(GeometryError::Degenerate { .. })));
    }

    #[test]
    fn oriented_area() {
        let unit = OrientedBox::from_axis(&ab(0.5, 0.5, 1.0, 1.0));
        assert_eq!(unit.area(), 1.0);
        assert!((diamond().area() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn intersections() {
        let a = ab(0.3, 0.5, 0.2, 0.2);
        let b = ab(0.4, 0.5, 0.2, 0.2);
        assert!((intersection_area(&a, &a) - a.area()).abs() < 1e-15);
        assert!((intersection_area(&a, &b) - 0.02).abs() < 1e-12);
        assert_eq!(intersection_area(&a, &ab(0.8, 0.5, 0.2, 0.2)), 0.0);
        assert!((iou(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &ab(0.8, 0.8, 0.1, 0.1)), 0.0);
        // touching edges do not intersect
        assert_eq!(iou(&a, &ab(0.5, 0.5, 0.2, 0.2)), 0.0);
    }

    #[test]
    fn clip_cases() {
        let line = OrientedBox::from_axis(&ab(0.5, 0.5, 0.8, 0.2));
        let inside = ab(0.5, 0.5, 0.1, 0.1);
        assert!((clip_area(&inside, &line) - inside.area()).abs() < 1e-15);
        assert_eq!(membership_ratio(&inside, &line), 1.0);

        // line covers exactly the left half of the word
        let word = ab(0.9, 0.5, 0.2, 0.1);
        assert!((membership_ratio(&word, &line) - 0.5).abs() < 1e-12);

        let far = ab(0.5, 0.9, 0.1, 0.05);
        assert_eq!(clip_area(&far, &line), 0.0);
        assert_eq!(membership_ratio(&far, &line), 0.0);

        // word fully containing the diamond
        let d = diamond();
        let big = ab(0.5, 0.5, 1.0, 1.0);
        assert!((clip_area(&big, &d) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn angles() {
        let flat = OrientedBox::from_axis(&ab(0.5, 0.5, 0.6, 0.1));
        assert_eq!(flat.angle().radians(), 0.0);

        let steep = OrientedBox::from_coords([0.0, 0.0, 0.8, 0.8, 0.8, 0.9, 0.0, 0.1]).unwrap();
        assert!((steep.angle().radians() - FRAC_PI_4).abs() < 1e-12);

        let mild = OrientedBox::from_coords([0.1, 0.1, 0.9, 0.2, 0.9, 0.3, 0.1, 0.2]).unwrap();
        assert!((mild.angle().radians() - 0.2f64.atan2(1.6)).abs() < 1e-12);
        assert!((mild.angle().radians() - 0.12435).abs() < 1e-5);
    }

    #[test]
    fn rotation() {
        let p = Point::new(0.3, 0.7);
        let c = Point::new(0.5, 0.5);
        assert_eq!(p.rotate_about(c, Angle::ZERO), p);
        let q = Point::new(1.0, 0.0).rotate_about(Point::new(0.0, 0.0), Angle(FRAC_PI_2));
        assert!(q.x.abs() < 1e-15 && (q.y - 1.0).abs() < 1e-15);
        let a = Angle(0.37);
        let back = p.rotate_about(c, a).rotate_about(c, -a);
        assert!((back.x - p.x).abs() < 1e-12 && (back.y - p.y).abs() < 1e-12);
    }

    #[test]
    fn envelopes() {
        let b = ab(0.4, 0.3, 0.2, 0.1);
        let env = OrientedBox::from_axis(&b).envelope().unwrap();
        assert!((env.cx - b.cx).abs() < 1e-15 && (env.w - b.w).abs() < 1e-15);
        let env = diamond().envelope().unwrap();
        assert!((env.w - 1.0).abs() < 1e-15 && (env.h - 1.0).abs() < 1e-15);

        let outside = OrientedBox::from_axis(&ab(1.5, 0.5, 0.2, 0.2));
        assert!(outside.envelope().is_err());
    }

    #[test]
    fn serde_checks_validity() {
        let b = OrientedBox::from_axis(&ab(0.5, 0.5, 0.4, 0.2));
        let json = serde_json::to_string(&b).unwrap();
        let back: OrientedBox = serde_json::from_str(&json).unwrap();
        assert_eq!(back, b);
        let bad = r#"[{"x":0,"y":0},{"x":1,"y":1},{"x":1,"y":0},{"x":0,"y":1}]"#;
        assert!(serde_json::from_str::<OrientedBox>(bad).is_err());
    }
}
