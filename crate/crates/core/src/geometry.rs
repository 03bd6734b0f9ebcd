//! Planar poses, rigid transforms and scan conversion.
//!
//! All headings in the crate are wrapped to `(-π, π]` through [`wrap_angle`].

use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

/// Wraps an angle to `(-π, π]`.
pub fn wrap_angle(theta: f64) -> f64 {
    if theta > -PI && theta <= PI {
        return theta;
    }
    let mut wrapped = theta.rem_euclid(2.0 * PI);
    if wrapped > PI {
        wrapped -= 2.0 * PI;
    }
    // rem_euclid can land exactly on -π after the shift for inputs like -π.
    if wrapped <= -PI {
        wrapped += 2.0 * PI;
    }
    wrapped
}

/// A point (or vector) in the plane, metres.
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
        self.x.hypot(self.y)
    }

    pub fn dot(self, other: Self) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the 3D cross product.
    pub fn cross(self, other: Self) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn distance(self, other: Self) -> f64 {
        (self - other).norm()
    }

    /// Rotates the vector counter-clockwise by `angle`.
    pub fn rotated(self, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn lerp(self, other: Self, t: f64) -> Self {
        self + (other - self) * t
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Point2 {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point2 {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Self;
    fn mul(self, rhs: f64) -> Self {
        Self::new(self.x * rhs, self.y * rhs)
    }
}

impl Neg for Point2 {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y)
    }
}

/// Planar pose. `theta` is kept wrapped by the constructor.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2D {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    pub fn position(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }

    /// Maps a world-frame point into this pose's local frame.
    pub fn to_local(&self, p: Point2) -> Point2 {
        (p - self.position()).rotated(-self.theta)
    }

    /// Maps a local-frame point into the world frame.
    pub fn to_world(&self, p: Point2) -> Point2 {
        p.rotated(self.theta) + self.position()
    }

    /// Unit heading vector.
    pub fn heading(&self) -> Point2 {
        let (s, c) = self.theta.sin_cos();
        Point2::new(c, s)
    }
}

/// Raw range scan in polar form.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarScan {
    pub angle_min: f64,
    pub angle_increment: f64,
    pub ranges: Vec<f64>,
}

impl PolarScan {
    pub fn beam_angle(&self, i: usize) -> f64 {
        self.angle_min + i as f64 * self.angle_increment
    }

    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }
}

/// Scan points in the vehicle's Cartesian frame.
#[derive(Debug, Clone, PartialEq)]
pub struct CartesianScan {
    pub points: Vec<Point2>,
}

pub fn polar_to_cartesian(scan: &PolarScan) -> CartesianScan {
    let points = scan
        .ranges
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            let (s, c) = scan.beam_angle(i).sin_cos();
            Point2::new(r * c, r * s)
        })
        .collect();
    CartesianScan { points }
}

/// Expresses world-frame points in the frame of `pose`.
pub fn world_to_vehicle(pose: &Pose2D, points: &[Point2]) -> Vec<Point2> {
    points.iter().map(|&p| pose.to_local(p)).collect()
}

/// Inverse of [`world_to_vehicle`].
pub fn vehicle_to_world(pose: &Pose2D, points: &[Point2]) -> Vec<Point2> {
    points.iter().map(|&p| pose.to_world(p)).collect()
}

/// Distance from `p` to the segment `[a, b]`, with the clamped parameter.
pub fn point_segment_distance(p: Point2, a: Point2, b: Point2) -> (f64, f64) {
    let ab = b - a;
    let len2 = ab.dot(ab);
    let t = if len2 > 0.0 {
        ((p - a).dot(ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p.distance(a + ab * t), t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: Point2, b: Point2, tol: f64) -> bool {
        (a.x - b.x).abs() < tol && (a.y - b.y).abs() < tol
    }

    #[test]
    fn single_axis_beam() {
        let scan = PolarScan {
            angle_min: 0.0,
            angle_increment: 0.1,
            ranges: vec![2.0],
        };
        let out = polar_to_cartesian(&scan);
        assert_eq!(out.points, vec![Point2::new(2.0, 0.0)]);
    }

    #[test]
    fn four_beams_on_unit_circle() {
        let scan = PolarScan {
            angle_min: -PI / 2.0,
            angle_increment: PI / 2.0,
            ranges: vec![1.0; 4],
        };
        let pts = polar_to_cartesian(&scan).points;
        // angles -π/2, 0, π/2, π
        let expect = [
            Point2::new(0.0, -1.0),
            Point2::new(1.0, 0.0),
            Point2::new(0.0, 1.0),
            Point2::new(-1.0, 0.0),
        ];
        for (p, e) in pts.iter().zip(expect) {
            assert!(close(*p, e, 1e-15), "{p:?} vs {e:?}");
        }
    }

    #[test]
    fn thirty_degree_beam() {
        let scan = PolarScan {
            angle_min: PI / 6.0,
            angle_increment: 0.0,
            ranges: vec![2.0],
        };
        let p = polar_to_cartesian(&scan).points[0];
        assert!(close(p, Point2::new(3f64.sqrt(), 1.0), 1e-15));
    }

    #[test]
    fn world_to_vehicle_cases() {
        let pts = [Point2::new(1.5, -2.0), Point2::new(0.0, 7.0)];
        assert_eq!(world_to_vehicle(&Pose2D::default(), &pts), pts.to_vec());
        let p = world_to_vehicle(&Pose2D::new(1.0, 0.0, 0.0), &[Point2::new(2.0, 0.0)]);
        assert!(close(p[0], Point2::new(1.0, 0.0), 1e-15));
        let p = world_to_vehicle(&Pose2D::new(0.0, 0.0, PI / 2.0), &[Point2::new(0.0, 3.0)]);
        assert!(close(p[0], Point2::new(3.0, 0.0), 1e-15));
    }

    #[test]
    fn vehicle_to_world_cases() {
        let p = vehicle_to_world(&Pose2D::new(1.0, 2.0, 0.0), &[Point2::default()]);
        assert_eq!(p[0], Point2::new(1.0, 2.0));
        let p = vehicle_to_world(
            &Pose2D::new(0.0, 0.0, PI / 4.0),
            &[Point2::new(2f64.sqrt(), 0.0)],
        );
        assert!(close(p[0], Point2::new(1.0, 1.0), 1e-15));
    }

    #[test]
    fn wrap_boundaries() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(-PI / 2.0 - 4.0 * PI) + PI / 2.0).abs() < 1e-12);
        assert_eq!(wrap_angle(0.25), 0.25);
    }

    fn finite_point() -> impl Strategy<Value = Point2> {
        (-100.0..100.0f64, -100.0..100.0f64).prop_map(|(x, y)| Point2::new(x, y))
    }

    proptest! {
        #[test]
        fn round_trip_is_identity(
            x in -100.0..100.0f64, y in -100.0..100.0f64, th in -10.0..10.0f64,
            pts in proptest::collection::vec(finite_point(), 1..20),
        ) {
            let pose = Pose2D::new(x, y, th);
            let back = vehicle_to_world(&pose, &world_to_vehicle(&pose, &pts));
            for (a, b) in back.iter().zip(&pts) {
                prop_assert!(close(*a, *b, 1e-9));
            }
        }

        #[test]
        fn transforms_preserve_distances(
            th in -10.0..10.0f64, a in finite_point(), b in finite_point(), t in finite_point(),
        ) {
            let pose = Pose2D::new(t.x, t.y, th);
            let l = world_to_vehicle(&pose, &[a, b]);
            prop_assert!((l[0].distance(l[1]) - a.distance(b)).abs() < 1e-12 * (1.0 + a.distance(b)) + 1e-12);
        }

        #[test]
        fn polar_norm_matches_range(
            amin in -3.0..3.0f64, inc in 0.0..0.1f64,
            ranges in proptest::collection::vec(0.0..30.0f64, 1..200),
        ) {
            let scan = PolarScan { angle_min: amin, angle_increment: inc, ranges: ranges.clone() };
            let pts = polar_to_cartesian(&scan).points;
            prop_assert_eq!(pts.len(), ranges.len());
            for (p, r) in pts.iter().zip(&ranges) {
                prop_assert!((p.norm() - r).abs() <= 1e-12 * r.max(1e-300));
            }
        }

        #[test]
        fn wrap_is_idempotent_and_in_range(th in -1e4..1e4f64) {
            let w = wrap_angle(th);
            prop_assert!(w > -PI && w <= PI);
            prop_assert_eq!(wrap_angle(w), w);
        }
    }
}
