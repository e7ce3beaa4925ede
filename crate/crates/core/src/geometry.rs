//! Ground-plane geometry: oriented boxes, rigid transforms between the world
//! and ego frames, and polygon-clipping intersection-over-union.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Wraps an angle into `[-π, π)`.
pub fn normalize_angle(a: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut r = a - two_pi * ((a + PI) / two_pi).floor();
    if r >= PI {
        r -= two_pi;
    }
    if r < -PI {
        r += two_pi;
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(self) -> f64 {
        (self.x * self.x + self.y * self.y).sqrt()
    }

    pub fn dist(self, other: Point2) -> f64 {
        (self - other).norm()
    }

    pub fn rotate(self, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn cross(self, other: Point2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn scale(self, k: f64) -> Self {
        Self::new(self.x * k, self.y * k)
    }
}

impl std::ops::Add for Point2 {
    type Output = Point2;
    fn add(self, o: Point2) -> Point2 {
        Point2::new(self.x + o.x, self.y + o.y)
    }
}

impl std::ops::Sub for Point2 {
    type Output = Point2;
    fn sub(self, o: Point2) -> Point2 {
        Point2::new(self.x - o.x, self.y - o.y)
    }
}

/// Planar pose. Yaw is kept in `[-π, π)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Self { x, y, yaw: normalize_angle(yaw) }
    }

    pub fn position(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }
}

/// Ground-plane footprint of an agent: center, extent along and across the
/// heading, and heading. Height and altitude are not modelled.
///
/// `yaw` and `yaw + π` describe the same rectangle but different headings;
/// the two are never canonicalized into each other.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub cx: f64,
    pub cy: f64,
    pub length: f64,
    pub width: f64,
    pub yaw: f64,
}

impl OrientedBox {
    pub fn new(cx: f64, cy: f64, length: f64, width: f64, yaw: f64) -> Result<Self> {
        if !(length > 0.0 && width > 0.0) || !length.is_finite() || !width.is_finite() {
            return Err(Error::InvalidBox { length, width });
        }
        if !(cx.is_finite() && cy.is_finite() && yaw.is_finite()) {
            return Err(Error::NonFinite("oriented box"));
        }
        Ok(Self { cx, cy, length, width, yaw: normalize_angle(yaw) })
    }

    pub fn center(&self) -> Point2 {
        Point2::new(self.cx, self.cy)
    }

    pub fn area(&self) -> f64 {
        self.length * self.width
    }

    pub fn with_center(&self, c: Point2) -> Self {
        Self { cx: c.x, cy: c.y, ..*self }
    }

    /// Corner vertices in counter-clockwise order, starting at the
    /// front-right corner.
    pub fn corners(&self) -> [Point2; 4] {
        let hl = 0.5 * self.length;
        let hw = 0.5 * self.width;
        let c = self.center();
        [
            Point2::new(hl, -hw),
            Point2::new(hl, hw),
            Point2::new(-hl, hw),
            Point2::new(-hl, -hw),
        ]
        .map(|p| c + p.rotate(self.yaw))
    }

    /// Closed containment test; points on the boundary are inside.
    pub fn contains(&self, p: Point2) -> bool {
        let local = (p - self.center()).rotate(-self.yaw);
        local.x.abs() <= 0.5 * self.length && local.y.abs() <= 0.5 * self.width
    }

    /// Half the diagonal; every point of the box lies within this distance
    /// of the center.
    pub fn circumradius(&self) -> f64 {
        0.5 * self.length.hypot(self.width)
    }
}

/// Rigid change of frame between world coordinates and the frame of an ego
/// pose (origin at the ego position, x-axis along the ego heading).
pub trait FrameTransform: Sized {
    fn world_to_ego(&self, ego: &Pose2) -> Self;
    fn ego_to_world(&self, ego: &Pose2) -> Self;
}

impl FrameTransform for Point2 {
    fn world_to_ego(&self, ego: &Pose2) -> Self {
        (*self - ego.position()).rotate(-ego.yaw)
    }

    fn ego_to_world(&self, ego: &Pose2) -> Self {
        self.rotate(ego.yaw) + ego.position()
    }
}

impl FrameTransform for Pose2 {
    fn world_to_ego(&self, ego: &Pose2) -> Self {
        let p = self.position().world_to_ego(ego);
        Pose2::new(p.x, p.y, self.yaw - ego.yaw)
    }

    fn ego_to_world(&self, ego: &Pose2) -> Self {
        let p = self.position().ego_to_world(ego);
        Pose2::new(p.x, p.y, self.yaw + ego.yaw)
    }
}

impl FrameTransform for OrientedBox {
    fn world_to_ego(&self, ego: &Pose2) -> Self {
        let p = self.center().world_to_ego(ego);
        Self { cx: p.x, cy: p.y, yaw: normalize_angle(self.yaw - ego.yaw), ..*self }
    }

    fn ego_to_world(&self, ego: &Pose2) -> Self {
        let p = self.center().ego_to_world(ego);
        Self { cx: p.x, cy: p.y, yaw: normalize_angle(self.yaw + ego.yaw), ..*self }
    }
}

/// Shoelace area of a simple polygon (absolute value).
pub fn polygon_area(poly: &[Point2]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..poly.len() {
        let j = (i + 1) % poly.len();
        acc += poly[i].cross(poly[j]);
    }
    0.5 * acc.abs()
}

/// Sutherland–Hodgman clip of `subject` against the convex, counter-clockwise
/// polygon `clip`.
pub fn clip_convex(subject: &[Point2], clip: &[Point2]) -> Vec<Point2> {
    let mut output: Vec<Point2> = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let edge = b - a;
        let side = |p: Point2| edge.cross(p - a);
        let input = std::mem::take(&mut output);
        for k in 0..input.len() {
            let cur = input[k];
            let prev = input[(k + input.len() - 1) % input.len()];
            let (sc, sp) = (side(cur), side(prev));
            if sc >= 0.0 {
                if sp < 0.0 {
                    output.push(intersect(prev, cur, sp, sc));
                }
                output.push(cur);
            } else if sp >= 0.0 {
                output.push(intersect(prev, cur, sp, sc));
            }
        }
    }
    output
}

fn intersect(p: Point2, q: Point2, sp: f64, sq: f64) -> Point2 {
    let t = sp / (sp - sq);
    p + (q - p).scale(t)
}

/// IOU of two convex counter-clockwise polygons.
pub fn iou_polygons(a: &[Point2], b: &[Point2]) -> f64 {
    let area_a = polygon_area(a);
    let area_b = polygon_area(b);
    let inter = polygon_area(&clip_convex(a, b));
    let union = area_a + area_b - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Exact IOU of two oriented boxes computed by convex polygon clipping.
pub fn iou_oriented(a: &OrientedBox, b: &OrientedBox) -> f64 {
    if a.center().dist(b.center()) > a.circumradius() + b.circumradius() {
        return 0.0;
    }
    iou_polygons(&a.corners(), &b.corners())
}

/// Coordinate scale applied before an IOU is taken.
///
/// `Raw` measures overlap in metric coordinates. `Normalized` re-expresses
/// each box field-wise in extent-normalized units (x and length by the x
/// extent, y and width by the y extent) and keeps the heading. On a square
/// extent this is a uniform scaling and leaves the IOU unchanged; otherwise
/// yawed boxes are distorted and the overlap ratio shifts.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IouScale {
    #[default]
    Raw,
    Normalized,
}

/// IOU under a given coordinate scale; `extent` is the scene size `(x, y)` in
/// meters and is only read in `Normalized` mode.
pub fn iou_scaled(a: &OrientedBox, b: &OrientedBox, scale: IouScale, extent: (f64, f64)) -> f64 {
    match scale {
        IouScale::Raw => iou_oriented(a, b),
        IouScale::Normalized => {
            let f = |o: &OrientedBox| OrientedBox {
                cx: o.cx / extent.0,
                cy: o.cy / extent.1,
                length: o.length / extent.0,
                width: o.width / extent.1,
                yaw: o.yaw,
            };
            iou_oriented(&f(a), &f(b))
        }
    }
}

/// Bearing interval subtended by a box as seen from a viewpoint.
///
/// Bounds are relative to `bearing`, the direction from the viewpoint to the
/// box center, so `lo <= 0 <= hi` whenever the viewpoint is outside the box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngularInterval {
    pub bearing: f64,
    pub lo: f64,
    pub hi: f64,
    pub range: f64,
}

impl AngularInterval {
    pub fn of_box(view: Point2, b: &OrientedBox) -> Self {
        let rel = b.center() - view;
        let bearing = rel.y.atan2(rel.x);
        let range = rel.norm();
        if b.contains(view) {
            return Self { bearing, lo: -PI, hi: PI, range };
        }
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for c in b.corners() {
            let d = c - view;
            let a = normalize_angle(d.y.atan2(d.x) - bearing);
            lo = lo.min(a);
            hi = hi.max(a);
        }
        Self { bearing, lo, hi, range }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    /// This interval expressed relative to another interval's bearing.
    pub fn relative_to(&self, reference_bearing: f64) -> (f64, f64) {
        let shift = normalize_angle(self.bearing - reference_bearing);
        (self.lo + shift, self.hi + shift)
    }

    /// Length of the intersection with `other`, in radians.
    pub fn overlap(&self, other: &AngularInterval) -> f64 {
        let (lo, hi) = other.relative_to(self.bearing);
        (hi.min(self.hi) - lo.max(self.lo)).max(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn unit(cx: f64, cy: f64, yaw: f64) -> OrientedBox {
        OrientedBox::new(cx, cy, 1.0, 1.0, yaw).unwrap()
    }

    #[test]
    fn corners_unit_square() {
        let c = unit(0.0, 0.0, 0.0).corners();
        let expected = [(0.5, -0.5), (0.5, 0.5), (-0.5, 0.5), (-0.5, -0.5)];
        for (p, e) in c.iter().zip(expected) {
            assert_abs_diff_eq!(p.x, e.0, epsilon = 1e-15);
            assert_abs_diff_eq!(p.y, e.1, epsilon = 1e-15);
        }
    }

    #[test]
    fn corners_quarter_turn() {
        let b = OrientedBox::new(0.0, 0.0, 4.0, 2.0, PI / 2.0).unwrap();
        let mut xs: Vec<_> = b.corners().iter().map(|p| (p.x.round() as i32, p.y.round() as i32)).collect();
        xs.sort();
        assert_eq!(xs, vec![(-1, -2), (-1, 2), (1, -2), (1, 2)]);
        for p in b.corners() {
            assert_abs_diff_eq!(p.x.abs(), 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(p.y.abs(), 2.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn corners_thirty_degrees() {
        // R(π/6) = [[√3/2, -1/2], [1/2, √3/2]] applied to (2, -1), (2, 1), (-2, 1), (-2, -1).
        let s3 = 3f64.sqrt() / 2.0;
        let expected = [
            (2.0 * s3 + 0.5, 1.0 - s3),
            (2.0 * s3 - 0.5, 1.0 + s3),
            (-2.0 * s3 - 0.5, -1.0 + s3),
            (-2.0 * s3 + 0.5, -1.0 - s3),
        ];
        let b = OrientedBox::new(0.0, 0.0, 4.0, 2.0, PI / 6.0).unwrap();
        for (p, e) in b.corners().iter().zip(expected) {
            assert_abs_diff_eq!(p.x, e.0, epsilon = 1e-12);
            assert_abs_diff_eq!(p.y, e.1, epsilon = 1e-12);
        }
        let cx: f64 = b.corners().iter().map(|p| p.x).sum::<f64>() / 4.0;
        assert_abs_diff_eq!(cx, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn corners_are_counter_clockwise() {
        let b = OrientedBox::new(3.0, -1.0, 4.5, 1.9, 2.3).unwrap();
        let c = b.corners();
        for i in 0..4 {
            let e1 = c[(i + 1) % 4] - c[i];
            let e2 = c[(i + 2) % 4] - c[(i + 1) % 4];
            assert!(e1.cross(e2) > 0.0);
        }
    }

    #[test]
    fn rejects_degenerate_dims() {
        assert!(OrientedBox::new(0.0, 0.0, 0.0, 1.0, 0.0).is_err());
        assert!(OrientedBox::new(0.0, 0.0, 1.0, -1.0, 0.0).is_err());
        assert!(OrientedBox::new(f64::NAN, 0.0, 1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn angle_normalization_range() {
        assert_eq!(normalize_angle(PI), -PI);
        assert_abs_diff_eq!(normalize_angle(3.0 * PI / 2.0), -PI / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(normalize_angle(-7.0), -7.0 + 2.0 * PI, epsilon = 1e-12);
    }

    #[test]
    fn iou_basic_cases() {
        let a = unit(0.0, 0.0, 0.0);
        assert_abs_diff_eq!(iou_oriented(&a, &a), 1.0, epsilon = 1e-12);
        assert_eq!(iou_oriented(&a, &unit(100.0, 0.0, 0.0)), 0.0);
        assert_abs_diff_eq!(iou_oriented(&a, &unit(0.5, 0.0, 0.0)), 1.0 / 3.0, epsilon = 1e-12);
        // edge contact only
        assert_abs_diff_eq!(iou_oriented(&a, &unit(1.0, 0.0, 0.0)), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn iou_rotated_square_closed_form() {
        // Unit square vs. the same rotated 45°: the intersection is a regular
        // octagon of area 2(√2 − 1).
        let inter = 2.0 * (2f64.sqrt() - 1.0);
        let expected = inter / (2.0 - inter);
        let got = iou_oriented(&unit(0.0, 0.0, 0.0), &unit(0.0, 0.0, PI / 4.0));
        assert_abs_diff_eq!(got, expected, epsilon = 1e-12);
    }

    #[test]
    fn normalized_scale_distorts_on_non_square_extent() {
        let a = OrientedBox::new(0.0, 0.0, 4.0, 2.0, 0.4).unwrap();
        let b = OrientedBox::new(0.8, 0.3, 4.0, 2.0, -0.2).unwrap();
        let raw = iou_scaled(&a, &b, IouScale::Raw, (200.0, 100.0));
        let square = iou_scaled(&a, &b, IouScale::Normalized, (100.0, 100.0));
        let aniso = iou_scaled(&a, &b, IouScale::Normalized, (200.0, 100.0));
        assert_abs_diff_eq!(raw, square, epsilon = 1e-12);
        assert!((raw - aniso).abs() > 1e-3);
    }

    #[test]
    fn frame_examples() {
        let origin = Pose2::new(0.0, 0.0, 0.0);
        let p = Point2::new(3.0, -2.0);
        assert_eq!(p.world_to_ego(&origin), p);
        let t = Point2::new(1.0, 0.0).world_to_ego(&Pose2::new(1.0, 0.0, 0.0));
        assert_abs_diff_eq!(t.x, 0.0);
        assert_abs_diff_eq!(t.y, 0.0);
        let r = Point2::new(2.0, 0.0).world_to_ego(&Pose2::new(1.0, 0.0, PI / 2.0));
        assert_abs_diff_eq!(r.x, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.y, -1.0, epsilon = 1e-15);
    }

    fn arb_box() -> impl Strategy<Value = OrientedBox> {
        (-20.0..20.0f64, -20.0..20.0f64, 0.3..6.0f64, 0.3..3.0f64, -4.0..4.0f64)
            .prop_map(|(x, y, l, w, t)| OrientedBox::new(x, y, l, w, t).unwrap())
    }

    fn arb_pose() -> impl Strategy<Value = Pose2> {
        (-50.0..50.0f64, -50.0..50.0f64, -4.0..4.0f64).prop_map(|(x, y, t)| Pose2::new(x, y, t))
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), d in (-3.0..3.0f64, -3.0..3.0f64), b in arb_box()) {
            let b = b.with_center(a.center() + Point2::new(d.0, d.1));
            let ab = iou_oriented(&a, &b);
            let ba = iou_oriented(&b, &a);
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert!((ab - ba).abs() < 1e-12);
        }

        #[test]
        fn iou_rigid_invariance(a in arb_box(), b in arb_box(), pose in arb_pose()) {
            let b = b.with_center(a.center() + Point2::new(1.0, -0.5));
            let before = iou_oriented(&a, &b);
            let after = iou_oriented(&a.world_to_ego(&pose), &b.world_to_ego(&pose));
            prop_assert!((before - after).abs() < 1e-9);
        }

        #[test]
        fn frame_roundtrip(b in arb_box(), ego in arb_pose()) {
            let back = b.world_to_ego(&ego).ego_to_world(&ego);
            prop_assert!((back.cx - b.cx).abs() < 1e-12);
            prop_assert!((back.cy - b.cy).abs() < 1e-12);
            prop_assert!(normalize_angle(back.yaw - b.yaw).abs() < 1e-12);
            let p = Pose2::new(b.cx, b.cy, b.yaw);
            let q = p.world_to_ego(&ego).ego_to_world(&ego);
            prop_assert!((q.x - p.x).abs() < 1e-12 && (q.y - p.y).abs() < 1e-12);
        }

        #[test]
        fn corner_centroid_is_center(b in arb_box()) {
            let c = b.corners();
            let mx = c.iter().map(|p| p.x).sum::<f64>() / 4.0;
            let my = c.iter().map(|p| p.y).sum::<f64>() / 4.0;
            prop_assert!((mx - b.cx).abs() < 1e-12 && (my - b.cy).abs() < 1e-12);
        }
    }
}
