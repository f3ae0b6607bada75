//! Core geometric types shared across the crate: points, clouds, rotated
//! BEV boxes, detector proposals, and labeled LiDAR frames.
//!
//! All coordinates are meters in the sensor frame (z up, sensor at origin).

use serde::{Deserialize, Serialize};
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

/// 3D point / vector in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

/// Vectors and points share a representation; context disambiguates.
pub type Vec3 = Point3;

impl Point3 {
    pub const ZERO: Point3 = Point3 { x: 0.0, y: 0.0, z: 0.0 };

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    pub fn dot(self, o: Point3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Point3) -> Point3 {
        Point3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Point3 {
        self / self.norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Component-wise absolute maximum (L-infinity norm).
    pub fn linf(self) -> f64 {
        self.x.abs().max(self.y.abs()).max(self.z.abs())
    }
}

impl Add for Point3 {
    type Output = Point3;
    fn add(self, o: Point3) -> Point3 {
        Point3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Point3 {
    fn add_assign(&mut self, o: Point3) {
        *self = *self + o;
    }
}

impl Sub for Point3 {
    type Output = Point3;
    fn sub(self, o: Point3) -> Point3 {
        Point3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Point3 {
    type Output = Point3;
    fn mul(self, s: f64) -> Point3 {
        Point3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Div<f64> for Point3 {
    type Output = Point3;
    fn div(self, s: f64) -> Point3 {
        Point3::new(self.x / s, self.y / s, self.z / s)
    }
}

impl Neg for Point3 {
    type Output = Point3;
    fn neg(self) -> Point3 {
        Point3::new(-self.x, -self.y, -self.z)
    }
}

/// Ordered sequence of points. Order is preserved everywhere because
/// rendering associates points with the rays that produced them.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Point3>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Self {
        PointCloud { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Axis-aligned 3D bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Point3,
    pub max: Point3,
}

impl Aabb {
    pub fn from_points<'a, I: IntoIterator<Item = &'a Point3>>(pts: I) -> Option<Aabb> {
        let mut it = pts.into_iter();
        let first = *it.next()?;
        let mut b = Aabb { min: first, max: first };
        for p in it {
            b.min.x = b.min.x.min(p.x);
            b.min.y = b.min.y.min(p.y);
            b.min.z = b.min.z.min(p.z);
            b.max.x = b.max.x.max(p.x);
            b.max.y = b.max.y.max(p.y);
            b.max.z = b.max.z.max(p.z);
        }
        Some(b)
    }

    pub fn inflated(self, m: f64) -> Aabb {
        Aabb {
            min: self.min - Point3::new(m, m, m),
            max: self.max + Point3::new(m, m, m),
        }
    }

    pub fn center(self) -> Point3 {
        (self.min + self.max) * 0.5
    }

    pub fn contains(self, p: Point3) -> bool {
        p.x >= self.min.x
            && p.x <= self.max.x
            && p.y >= self.min.y
            && p.y <= self.max.y
            && p.z >= self.min.z
            && p.z <= self.max.z
    }
}

/// Rigid transform stored as a rotation matrix plus translation
/// (homogeneous 4x4 with bottom row 0 0 0 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    /// Row-major 3x3 rotation block.
    pub rot: [[f64; 3]; 3],
    pub trans: Point3,
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rot: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            trans: Point3::ZERO,
        }
    }

    /// Rotation about +z by `yaw`, then translation.
    pub fn yaw_translation(yaw: f64, trans: Point3) -> Self {
        let (c, s) = (yaw.cos(), yaw.sin());
        RigidTransform {
            rot: [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]],
            trans,
        }
    }

    pub fn apply(&self, p: Point3) -> Point3 {
        let r = &self.rot;
        Point3::new(
            r[0][0] * p.x + r[0][1] * p.y + r[0][2] * p.z + self.trans.x,
            r[1][0] * p.x + r[1][1] * p.y + r[1][2] * p.z + self.trans.y,
            r[2][0] * p.x + r[2][1] * p.y + r[2][2] * p.z + self.trans.z,
        )
    }

    /// Rotate a direction (no translation).
    pub fn apply_rot(&self, p: Point3) -> Point3 {
        let r = &self.rot;
        Point3::new(
            r[0][0] * p.x + r[0][1] * p.y + r[0][2] * p.z,
            r[1][0] * p.x + r[1][1] * p.y + r[1][2] * p.z,
            r[2][0] * p.x + r[2][1] * p.y + r[2][2] * p.z,
        )
    }

    /// Full 4x4 row-major matrix.
    pub fn matrix(&self) -> [[f64; 4]; 4] {
        let r = &self.rot;
        [
            [r[0][0], r[0][1], r[0][2], self.trans.x],
            [r[1][0], r[1][1], r[1][2], self.trans.y],
            [r[2][0], r[2][1], r[2][2], self.trans.z],
            [0.0, 0.0, 0.0, 1.0],
        ]
    }
}

/// Normalize an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut a = a.rem_euclid(2.0 * std::f64::consts::PI);
    if a > std::f64::consts::PI {
        a -= 2.0 * std::f64::consts::PI;
    }
    a
}

/// Rotated bird's-eye-view bounding box with a vertical extent.
///
/// `w` is the extent along the heading axis, `h` the lateral extent.
/// Heading `alpha` is normalized to (-pi, pi] on construction; boxes
/// differing by pi are distinct (orientation matters for placement).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxBev {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub alpha: f64,
    pub z_min: f64,
    pub z_max: f64,
}

impl BoxBev {
    pub fn new(x: f64, y: f64, w: f64, h: f64, alpha: f64, z_min: f64, z_max: f64) -> Self {
        assert!(w > 0.0 && h > 0.0, "box extents must be positive");
        assert!(z_max > z_min, "z_max must exceed z_min");
        BoxBev { x, y, w, h, alpha: wrap_angle(alpha), z_min, z_max }
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x, self.y)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Corners in counter-clockwise order.
    pub fn corners(&self) -> [(f64, f64); 4] {
        let (c, s) = (self.alpha.cos(), self.alpha.sin());
        let (hw, hh) = (self.w * 0.5, self.h * 0.5);
        let mut out = [(0.0, 0.0); 4];
        for (i, (lx, ly)) in [(hw, hh), (-hw, hh), (-hw, -hh), (hw, -hh)].into_iter().enumerate() {
            out[i] = (self.x + c * lx - s * ly, self.y + s * lx + c * ly);
        }
        out
    }

    /// BEV membership plus vertical-extent test.
    pub fn contains(&self, p: Point3) -> bool {
        if p.z < self.z_min || p.z > self.z_max {
            return false;
        }
        let (c, s) = (self.alpha.cos(), self.alpha.sin());
        let dx = p.x - self.x;
        let dy = p.y - self.y;
        // rotate into box frame
        let lx = c * dx + s * dy;
        let ly = -s * dx + c * dy;
        lx.abs() <= self.w * 0.5 && ly.abs() <= self.h * 0.5
    }
}

/// Detector proposal: a BEV box plus a confidence score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub r#box: BoxBev,
    pub score: f64,
}

impl Proposal {
    pub fn new(b: BoxBev, score: f64) -> Self {
        assert!((0.0..=1.0).contains(&score), "score must be in [0, 1]");
        Proposal { r#box: b, score }
    }
}

/// One LiDAR sweep with ground-truth vehicle boxes.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SceneFrame {
    pub cloud: PointCloud,
    pub labels: Vec<BoxBev>,
    pub frame_id: String,
}

impl SceneFrame {
    /// Labels with at least `min_points` cloud points inside them.
    pub fn eligible_labels(&self, min_points: usize) -> Vec<usize> {
        (0..self.labels.len())
            .filter(|&i| {
                self.cloud.points.iter().filter(|p| self.labels[i].contains(**p)).count()
                    >= min_points
            })
            .collect()
    }
}

/// Points of `cloud` inside the rotated box (BEV test plus z range),
/// order preserved.
pub fn points_in_box(cloud: &PointCloud, b: &BoxBev) -> PointCloud {
    PointCloud::new(cloud.points.iter().copied().filter(|p| b.contains(*p)).collect())
}

/// Sutherland-Hodgman clip of convex polygon `subject` against convex
/// polygon `clip`, both counter-clockwise.
fn clip_polygon(subject: &[(f64, f64)], clip: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut output = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        // inside = left of directed edge a->b
        let inside =
            |p: (f64, f64)| (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0) >= 0.0;
        let intersect = |p: (f64, f64), q: (f64, f64)| {
            let d1 = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
            let d2 = (b.0 - a.0) * (q.1 - a.1) - (b.1 - a.1) * (q.0 - a.0);
            let t = d1 / (d1 - d2);
            (p.0 + t * (q.0 - p.0), p.1 + t * (q.1 - p.1))
        };
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let cur = input[j];
            let next = input[(j + 1) % input.len()];
            if inside(cur) {
                output.push(cur);
                if !inside(next) {
                    output.push(intersect(cur, next));
                }
            } else if inside(next) {
                output.push(intersect(cur, next));
            }
        }
    }
    output
}

fn polygon_area(poly: &[(f64, f64)]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut a = 0.0;
    for i in 0..poly.len() {
        let p = poly[i];
        let q = poly[(i + 1) % poly.len()];
        a += p.0 * q.1 - q.0 * p.1;
    }
    a.abs() * 0.5
}

/// Rotated BEV intersection-over-union via convex polygon clipping.
pub fn bev_iou(a: &BoxBev, b: &BoxBev) -> f64 {
    let inter = polygon_area(&clip_polygon(&a.corners(), &b.corners()));
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn unit_box() -> BoxBev {
        BoxBev::new(0.0, 0.0, 1.0, 1.0, 0.0, -1.0, 1.0)
    }

    #[test]
    fn points_in_box_center_point() {
        let cloud = PointCloud::new(vec![Point3::new(0.0, 0.0, 0.0)]);
        assert_eq!(points_in_box(&cloud, &unit_box()).len(), 1);
    }

    #[test]
    fn points_in_box_outside_extent() {
        let cloud = PointCloud::new(vec![Point3::new(2.0, 0.0, 0.0)]);
        assert_eq!(points_in_box(&cloud, &unit_box()).len(), 0);
    }

    #[test]
    fn points_in_box_rotated_matches_rotation_oracle() {
        let b = BoxBev::new(0.3, -0.2, 2.0, 1.0, std::f64::consts::FRAC_PI_4, -0.5, 0.5);
        let mut rng = StdRng::seed_from_u64(7);
        let cloud = PointCloud::new(
            (0..1000)
                .map(|_| {
                    Point3::new(
                        rng.gen_range(-2.0..2.0),
                        rng.gen_range(-2.0..2.0),
                        rng.gen_range(-1.0..1.0),
                    )
                })
                .collect(),
        );
        let got = points_in_box(&cloud, &b);
        // oracle: inverse-rotate into box frame, axis-aligned test
        let (c, s) = (b.alpha.cos(), b.alpha.sin());
        let expect: Vec<Point3> = cloud
            .points
            .iter()
            .copied()
            .filter(|p| {
                let dx = p.x - b.x;
                let dy = p.y - b.y;
                let lx = c * dx + s * dy;
                let ly = -s * dx + c * dy;
                lx.abs() <= b.w / 2.0
                    && ly.abs() <= b.h / 2.0
                    && p.z >= b.z_min
                    && p.z <= b.z_max
            })
            .collect();
        assert_eq!(got.points, expect);
    }

    #[test]
    fn iou_identical_is_one() {
        let b = BoxBev::new(1.0, 2.0, 3.0, 1.5, 0.4, 0.0, 1.0);
        assert!((bev_iou(&b, &b) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn iou_disjoint_is_zero() {
        let a = BoxBev::new(0.0, 0.0, 2.0, 2.0, 0.2, 0.0, 1.0);
        let b = BoxBev::new(100.0, 0.0, 2.0, 2.0, -0.7, 0.0, 1.0);
        assert_eq!(bev_iou(&a, &b), 0.0);
    }

    #[test]
    fn iou_matches_monte_carlo() {
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..5 {
            let a = BoxBev::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(0.5..3.0),
                rng.gen_range(0.5..3.0),
                rng.gen_range(-3.0..3.0),
                0.0,
                1.0,
            );
            let b = BoxBev::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(0.5..3.0),
                rng.gen_range(0.5..3.0),
                rng.gen_range(-3.0..3.0),
                0.0,
                1.0,
            );
            // monte-carlo over a window covering both boxes
            let (lo, hi) = (-4.0, 4.0);
            let n = 1_000_000usize;
            let mut in_a = 0usize;
            let mut in_b = 0usize;
            let mut in_both = 0usize;
            for _ in 0..n {
                let p = Point3::new(rng.gen_range(lo..hi), rng.gen_range(lo..hi), 0.5);
                let pa = a.contains(p);
                let pb = b.contains(p);
                in_a += pa as usize;
                in_b += pb as usize;
                in_both += (pa && pb) as usize;
            }
            let union = (in_a + in_b - in_both) as f64;
            let mc = if union == 0.0 { 0.0 } else { in_both as f64 / union };
            assert!(
                (bev_iou(&a, &b) - mc).abs() < 0.01,
                "iou {} vs mc {}",
                bev_iou(&a, &b),
                mc
            );
        }
    }

    #[test]
    fn iou_symmetry_and_rigid_invariance() {
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..200 {
            let a = BoxBev::new(
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
                rng.gen_range(0.5..4.0),
                rng.gen_range(0.5..4.0),
                rng.gen_range(-3.0..3.0),
                0.0,
                1.0,
            );
            let b = BoxBev::new(
                a.x + rng.gen_range(-2.0..2.0),
                a.y + rng.gen_range(-2.0..2.0),
                rng.gen_range(0.5..4.0),
                rng.gen_range(0.5..4.0),
                rng.gen_range(-3.0..3.0),
                0.0,
                1.0,
            );
            let iou = bev_iou(&a, &b);
            assert!((iou - bev_iou(&b, &a)).abs() < 1e-12);
            // rigid motion applied to both boxes
            let phi: f64 = rng.gen_range(-3.0..3.0);
            let (tx, ty) = (rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0));
            let mov = |bx: &BoxBev| {
                let (c, s) = (phi.cos(), phi.sin());
                BoxBev::new(
                    c * bx.x - s * bx.y + tx,
                    s * bx.x + c * bx.y + ty,
                    bx.w,
                    bx.h,
                    bx.alpha + phi,
                    bx.z_min,
                    bx.z_max,
                )
            };
            assert!((bev_iou(&mov(&a), &mov(&b)) - iou).abs() < 1e-9);
        }
    }

    #[test]
    fn wrap_angle_range() {
        for a in [-10.0, -std::f64::consts::PI, 0.0, 3.5, 10.0] {
            let w = wrap_angle(a);
            assert!(w > -std::f64::consts::PI - 1e-12 && w <= std::f64::consts::PI + 1e-12);
        }
        assert!((wrap_angle(-std::f64::consts::PI) - std::f64::consts::PI).abs() < 1e-12);
    }
}
