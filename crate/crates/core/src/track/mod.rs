//! Reference racelines: storage, CSV I/O, arc-length geometry and the
//! minimum-curvature optimizer.

mod io;
mod mincurv;
pub mod shapes;

use std::path::PathBuf;

use thiserror::Error;

use crate::geometry::{wrap_angle, Point2};

pub use io::{
    format_centerline, format_waypoints, load_centerline, load_waypoints, parse_centerline,
    parse_waypoints, save_centerline, save_waypoints,
};
pub use mincurv::{
    curvature_objective, optimize_min_curvature, MinCurvatureConfig, MinCurvatureSolution,
};

/// Minimum distance between consecutive waypoints.
pub const MIN_SPACING: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum TrackError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{source_name}, line {line}: {msg}")]
    Parse {
        source_name: String,
        line: usize,
        msg: String,
    },
    #[error("waypoint {index}: field `{field}` {msg}")]
    InvalidField {
        index: usize,
        field: &'static str,
        msg: String,
    },
    #[error("track needs at least 3 points, found {0}")]
    TooFewPoints(usize),
    #[error("points {0} and {1} are closer than {MIN_SPACING} m")]
    DuplicatePoint(usize, usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("min-curvature optimizer stopped after {iterations} iterations without converging (objective {objective:.6e})")]
    NoConvergence {
        iterations: usize,
        objective: f64,
        last_alpha: Vec<f64>,
        history: Vec<f64>,
    },
}

/// One reference point: position, speed, heading and signed curvature.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Waypoint {
    pub x: f64,
    pub y: f64,
    pub v: f64,
    pub theta: f64,
    pub gamma: f64,
}

impl Waypoint {
    pub fn position(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }
}

/// A validated waypoint sequence, optionally closed into a loop.
#[derive(Debug, Clone, PartialEq)]
pub struct Raceline {
    waypoints: Vec<Waypoint>,
    closed: bool,
    /// `cum[i]` is the arc length from waypoint 0 to waypoint i; for closed
    /// lines `cum[n]` is the perimeter.
    cum: Vec<f64>,
}

impl Raceline {
    /// Validates and wraps headings. Closed and open lines both need 3 points
    /// so curvature is defined everywhere.
    pub fn new(mut waypoints: Vec<Waypoint>, closed: bool) -> Result<Self, TrackError> {
        if waypoints.len() < 3 {
            return Err(TrackError::TooFewPoints(waypoints.len()));
        }
        for (i, w) in waypoints.iter_mut().enumerate() {
            for (field, value) in [
                ("x", w.x),
                ("y", w.y),
                ("v", w.v),
                ("theta", w.theta),
                ("gamma", w.gamma),
            ] {
                if !value.is_finite() {
                    return Err(TrackError::InvalidField {
                        index: i,
                        field,
                        msg: format!("must be finite, got {value}"),
                    });
                }
            }
            if w.v < 0.0 {
                return Err(TrackError::InvalidField {
                    index: i,
                    field: "v",
                    msg: format!("must be >= 0, got {}", w.v),
                });
            }
            w.theta = wrap_angle(w.theta);
        }
        let n = waypoints.len();
        let seg_count = if closed { n } else { n - 1 };
        let mut cum = Vec::with_capacity(seg_count + 1);
        cum.push(0.0);
        for i in 0..seg_count {
            let j = (i + 1) % n;
            let d = waypoints[i].position().distance(waypoints[j].position());
            if d <= MIN_SPACING {
                return Err(TrackError::DuplicatePoint(i, j));
            }
            cum.push(cum[i] + d);
        }
        Ok(Self {
            waypoints,
            closed,
            cum,
        })
    }

    /// Builds a raceline from bare positions, deriving heading from central
    /// differences, curvature from [`curvature_profile`] and speed from the
    /// lateral-acceleration law `v = min(v_max, sqrt(a_lat_max / |γ|))`.
    pub fn from_positions(
        points: &[Point2],
        closed: bool,
        v_max: f64,
        a_lat_max: f64,
    ) -> Result<Self, TrackError> {
        let gamma = curvature_profile(points, closed)?;
        let n = points.len();
        let waypoints = (0..n)
            .map(|i| {
                let (prev, next) = neighbours(points, i, closed);
                let d = next - prev;
                Waypoint {
                    x: points[i].x,
                    y: points[i].y,
                    v: speed_limit(gamma[i], v_max, a_lat_max),
                    theta: d.y.atan2(d.x),
                    gamma: gamma[i],
                }
            })
            .collect();
        Self::new(waypoints, closed)
    }

    pub fn waypoints(&self) -> &[Waypoint] {
        &self.waypoints
    }

    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn positions(&self) -> Vec<Point2> {
        self.waypoints.iter().map(Waypoint::position).collect()
    }

    /// Perimeter for closed lines, polyline length otherwise.
    pub fn total_length(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    /// Arc length from waypoint 0 to waypoint `i`.
    pub fn arc_length_at(&self, i: usize) -> f64 {
        self.cum[i]
    }

    /// Index of the segment containing absolute arc position `s` (already
    /// reduced to `[0, total]` for closed lines) and the position within it.
    fn segment_at(&self, s: f64) -> (usize, f64) {
        let seg_count = self.cum.len() - 1;
        let idx = match self
            .cum
            .binary_search_by(|c| c.partial_cmp(&s).expect("finite arc length"))
        {
            Ok(i) => i,
            Err(i) => i.saturating_sub(1),
        };
        let idx = idx.min(seg_count - 1);
        (idx, s - self.cum[idx])
    }

    /// Point on the piecewise-linear interpolant at arc length `s` from
    /// waypoint 0. Closed lines wrap; open lines extrapolate along their end
    /// segments.
    pub fn point_at(&self, s: f64) -> Point2 {
        let n = self.waypoints.len();
        let total = self.total_length();
        let s = if self.closed { s.rem_euclid(total) } else { s };
        let (seg, local) = if !self.closed && s < 0.0 {
            (0, s)
        } else {
            self.segment_at(s.min(total))
        };
        let local = if !self.closed && s > total {
            local + (s - total)
        } else {
            local
        };
        let a = self.waypoints[seg].position();
        let b = self.waypoints[(seg + 1) % n].position();
        let len = self.cum[seg + 1] - self.cum[seg];
        a.lerp(b, local / len)
    }

    /// Reference speed of the segment containing arc position `s`.
    pub fn speed_at(&self, s: f64) -> f64 {
        let total = self.total_length();
        let s = if self.closed {
            s.rem_euclid(total)
        } else {
            s.clamp(0.0, total)
        };
        let (seg, _) = self.segment_at(s);
        self.waypoints[seg].v
    }

    /// Signed arc-length difference `to - from`, wrapped to `(-P/2, P/2]` on
    /// closed lines.
    pub fn arc_delta(&self, from: f64, to: f64) -> f64 {
        let d = to - from;
        if !self.closed {
            return d;
        }
        let p = self.total_length();
        let mut d = d.rem_euclid(p);
        if d > p / 2.0 {
            d -= p;
        }
        d
    }

    /// Arc position of the orthogonal projection of `p` onto the polyline,
    /// together with the distance.
    pub fn project(&self, p: Point2) -> (f64, f64) {
        let n = self.waypoints.len();
        let seg_count = self.cum.len() - 1;
        let mut best = (0.0, f64::INFINITY);
        for i in 0..seg_count {
            let a = self.waypoints[i].position();
            let b = self.waypoints[(i + 1) % n].position();
            let (d, t) = crate::geometry::point_segment_distance(p, a, b);
            if d < best.1 {
                best = (self.cum[i] + t * (self.cum[i + 1] - self.cum[i]), d);
            }
        }
        best
    }
}

pub(crate) fn speed_limit(gamma: f64, v_max: f64, a_lat_max: f64) -> f64 {
    if gamma == 0.0 {
        v_max
    } else {
        v_max.min((a_lat_max / gamma.abs()).sqrt())
    }
}

fn neighbours(points: &[Point2], i: usize, closed: bool) -> (Point2, Point2) {
    let n = points.len();
    if closed {
        (points[(i + n - 1) % n], points[(i + 1) % n])
    } else {
        (points[i.saturating_sub(1)], points[(i + 1).min(n - 1)])
    }
}

/// Waypoint nearest to `position`; ties resolve to the lowest index.
pub fn closest_waypoint(raceline: &Raceline, position: Point2) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, w) in raceline.waypoints().iter().enumerate() {
        let d = w.position().distance(position);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// `count` points evenly spaced along `length` metres of the raceline,
/// starting at waypoint `start_index`.
pub fn resample_by_arclength(
    raceline: &Raceline,
    start_index: usize,
    length: f64,
    count: usize,
) -> Result<Vec<Point2>, TrackError> {
    if !(length > 0.0) || !length.is_finite() {
        return Err(TrackError::InvalidArgument(format!(
            "resample length must be positive, got {length}"
        )));
    }
    if count < 2 {
        return Err(TrackError::InvalidArgument(format!(
            "resample count must be >= 2, got {count}"
        )));
    }
    if start_index >= raceline.len() {
        return Err(TrackError::InvalidArgument(format!(
            "start index {start_index} out of range for {} waypoints",
            raceline.len()
        )));
    }
    let s0 = raceline.arc_length_at(start_index);
    let step = length / (count - 1) as f64;
    Ok((0..count)
        .map(|k| raceline.point_at(s0 + k as f64 * step))
        .collect())
}

/// Signed Menger curvature of consecutive triples: `2·cross / (|a||b||c|)`.
/// Positive for counter-clockwise turns. Open curves copy the neighbouring
/// value onto their endpoints.
pub fn curvature_profile(points: &[Point2], closed: bool) -> Result<Vec<f64>, TrackError> {
    let n = points.len();
    if n < 3 {
        return Err(TrackError::TooFewPoints(n));
    }
    let mut out = vec![0.0; n];
    for (i, k) in out.iter_mut().enumerate() {
        if !closed && (i == 0 || i == n - 1) {
            continue;
        }
        let (p0, p2) = neighbours(points, i, closed);
        *k = menger(p0, points[i], p2);
    }
    if !closed {
        out[0] = out[1];
        out[n - 1] = out[n - 2];
    }
    Ok(out)
}

pub(crate) fn menger(p0: Point2, p1: Point2, p2: Point2) -> f64 {
    let a = p1 - p0;
    let b = p2 - p1;
    let c = p2 - p0;
    let denom = a.norm() * b.norm() * c.norm();
    if denom == 0.0 {
        return 0.0;
    }
    2.0 * a.cross(b) / denom
}

/// Centerline with per-point half widths; the optimizer's search space.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackCenterline {
    pub centers: Vec<Point2>,
    pub half_width_left: Vec<f64>,
    pub half_width_right: Vec<f64>,
    pub closed: bool,
}

impl TrackCenterline {
    /// A closed-loop track.
    pub fn new(
        centers: Vec<Point2>,
        half_width_left: Vec<f64>,
        half_width_right: Vec<f64>,
    ) -> Result<Self, TrackError> {
        Self::with_closure(centers, half_width_left, half_width_right, true)
    }

    pub fn with_closure(
        centers: Vec<Point2>,
        half_width_left: Vec<f64>,
        half_width_right: Vec<f64>,
        closed: bool,
    ) -> Result<Self, TrackError> {
        let n = centers.len();
        if n < 3 {
            return Err(TrackError::TooFewPoints(n));
        }
        if half_width_left.len() != n || half_width_right.len() != n {
            return Err(TrackError::InvalidArgument(format!(
                "width arrays must have {n} entries (left {}, right {})",
                half_width_left.len(),
                half_width_right.len()
            )));
        }
        for i in 0..n {
            for (field, w) in [
                ("w_left", half_width_left[i]),
                ("w_right", half_width_right[i]),
            ] {
                if !(w > 0.0) || !w.is_finite() {
                    return Err(TrackError::InvalidField {
                        index: i,
                        field,
                        msg: format!("must be positive, got {w}"),
                    });
                }
            }
            if (closed || i + 1 < n) && centers[i].distance(centers[(i + 1) % n]) <= MIN_SPACING {
                return Err(TrackError::DuplicatePoint(i, (i + 1) % n));
            }
        }
        Ok(Self {
            centers,
            half_width_left,
            half_width_right,
            closed,
        })
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// Unit left normals from central-difference tangents (one-sided at the
    /// ends of open tracks).
    pub fn normals(&self) -> Vec<Point2> {
        let n = self.centers.len();
        (0..n)
            .map(|i| {
                let (prev, next) = neighbours(&self.centers, i, self.closed);
                let t = next - prev;
                let t = t * (1.0 / t.norm());
                Point2::new(-t.y, t.x)
            })
            .collect()
    }
}

/// Signed lateral displacement of each centerline point along its left normal.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaVector {
    pub alpha: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    pub(crate) fn straight(n: usize, spacing: f64, v: f64) -> Raceline {
        let wps = (0..n)
            .map(|i| Waypoint {
                x: i as f64 * spacing,
                y: 0.0,
                v,
                theta: 0.0,
                gamma: 0.0,
            })
            .collect();
        Raceline::new(wps, false).unwrap()
    }

    fn square(side: f64) -> Raceline {
        let pts = [(0.0, 0.0), (side, 0.0), (side, side), (0.0, side)];
        let wps = pts
            .iter()
            .map(|&(x, y)| Waypoint {
                x,
                y,
                v: 1.0,
                ..Default::default()
            })
            .collect();
        Raceline::new(wps, true).unwrap()
    }

    #[test]
    fn closest_waypoint_cases() {
        let line = straight(5, 1.0, 1.0);
        assert_eq!(closest_waypoint(&line, Point2::new(2.0, 0.0)), (2, 0.0));
        let (i, d) = closest_waypoint(&line, Point2::new(0.5, 0.3));
        assert_eq!(i, 0);
        assert!((d - 0.5f64.hypot(0.3)).abs() < 1e-15);
    }

    #[test]
    fn resample_straight_line() {
        let line = straight(20, 1.0, 1.0);
        let pts = resample_by_arclength(&line, 0, 9.0, 10).unwrap();
        for (k, p) in pts.iter().enumerate() {
            assert!((p.x - k as f64).abs() < 1e-12 && p.y == 0.0);
        }
    }

    #[test]
    fn resample_full_wrap_returns_to_start() {
        let sq = square(2.0);
        let pts = resample_by_arclength(&sq, 0, 8.0, 5).unwrap();
        let expect = [(0.0, 0.0), (2.0, 0.0), (2.0, 2.0), (0.0, 2.0), (0.0, 0.0)];
        for (p, e) in pts.iter().zip(expect) {
            assert!(p.distance(Point2::new(e.0, e.1)) < 1e-12, "{p:?}");
        }
        // longer than the perimeter wraps modulo perimeter
        let pts = resample_by_arclength(&sq, 1, 10.0, 2).unwrap();
        assert!(pts[1].distance(Point2::new(2.0, 2.0)) < 1e-12);
    }

    #[test]
    fn resample_rejects_bad_arguments() {
        let line = straight(5, 1.0, 1.0);
        assert!(resample_by_arclength(&line, 0, 0.0, 5).is_err());
        assert!(resample_by_arclength(&line, 0, 1.0, 1).is_err());
        assert!(resample_by_arclength(&line, 9, 1.0, 3).is_err());
    }

    #[test]
    fn curvature_of_circle() {
        for &(dir, sign) in &[(1.0, 1.0), (-1.0, -1.0)] {
            let pts: Vec<Point2> = (0..36)
                .map(|i| {
                    let a = dir * i as f64 * 2.0 * PI / 36.0;
                    Point2::new(2.0 * a.cos(), 2.0 * a.sin())
                })
                .collect();
            let k = curvature_profile(&pts, true).unwrap();
            for v in k {
                // circumscribed circle of three points on a circle is the circle itself
                assert!((v - sign * 0.5).abs() < 1e-12, "{v}");
            }
        }
    }

    #[test]
    fn curvature_of_collinear_points_is_zero() {
        let pts: Vec<Point2> = (0..6)
            .map(|i| Point2::new(i as f64, 2.0 * i as f64))
            .collect();
        assert!(curvature_profile(&pts, false)
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
        assert!(curvature_profile(&pts[..2], false).is_err());
    }

    #[test]
    fn open_curve_endpoints_copy_neighbours() {
        let pts = [
            Point2::new(0.0, 0.0),
            Point2::new(1.0, 0.0),
            Point2::new(2.0, 0.5),
            Point2::new(3.0, 1.5),
        ];
        let k = curvature_profile(&pts, false).unwrap();
        assert_eq!(k[0], k[1]);
        assert_eq!(k[3], k[2]);
    }

    #[test]
    fn raceline_rejects_bad_input() {
        let mut wps: Vec<Waypoint> = straight(4, 1.0, 1.0).waypoints().to_vec();
        assert!(matches!(
            Raceline::new(wps[..2].to_vec(), true),
            Err(TrackError::TooFewPoints(2))
        ));
        wps[1].v = -1.0;
        assert!(matches!(
            Raceline::new(wps.clone(), false),
            Err(TrackError::InvalidField { field: "v", .. })
        ));
        wps[1].v = 1.0;
        wps[2] = wps[1];
        assert!(matches!(
            Raceline::new(wps, false),
            Err(TrackError::DuplicatePoint(1, 2))
        ));
    }

    /// Independent walk over segments, accumulating lengths one by one.
    fn oracle_point(pts: &[Point2], closed: bool, start: usize, dist: f64) -> Point2 {
        let n = pts.len();
        let mut i = start;
        let mut left = dist;
        loop {
            let j = if closed { (i + 1) % n } else { i + 1 };
            if !closed && j >= n {
                let a = pts[n - 2];
                let b = pts[n - 1];
                let d = (b - a) * (1.0 / a.distance(b));
                return b + d * left;
            }
            let seg = pts[i].distance(pts[j]);
            if left <= seg {
                return pts[i].lerp(pts[j], left / seg);
            }
            left -= seg;
            i = j;
        }
    }

    proptest! {
        #[test]
        fn resample_matches_segment_walk(
            steps in proptest::collection::vec((0.1..2.0f64, -1.0..1.0f64), 4..30),
            closed in any::<bool>(),
            start_frac in 0.0..1.0f64,
            len_frac in 0.05..1.5f64,
            count in 2usize..40,
        ) {
            let mut pts = vec![Point2::default()];
            let mut heading = 0.0f64;
            for (d, turn) in &steps {
                heading += turn;
                let last = *pts.last().unwrap();
                pts.push(last + Point2::new(heading.cos(), heading.sin()) * *d);
            }
            let wps: Vec<Waypoint> = pts.iter().map(|p| Waypoint { x: p.x, y: p.y, v: 1.0, ..Default::default() }).collect();
            let line = match Raceline::new(wps, closed) { Ok(l) => l, Err(_) => return Ok(()) };
            let start = ((pts.len() - 1) as f64 * start_frac) as usize;
            let length = line.total_length() * len_frac;
            let out = resample_by_arclength(&line, start, length, count).unwrap();
            prop_assert_eq!(out.len(), count);
            let step = length / (count - 1) as f64;
            for (k, p) in out.iter().enumerate() {
                let mut dist = k as f64 * step;
                if closed { dist = dist.rem_euclid(line.total_length()); }
                let o = oracle_point(&pts, closed, start, dist);
                prop_assert!(p.distance(o) < 1e-9, "k={} {:?} vs {:?}", k, p, o);
            }
        }

        #[test]
        fn curvature_is_rigid_invariant(
            pts in proptest::collection::vec((-10.0..10.0f64, -10.0..10.0f64), 3..20),
            th in -PI..PI, tx in -50.0..50.0f64, ty in -50.0..50.0f64,
        ) {
            let pts: Vec<Point2> = pts.into_iter().map(|(x, y)| Point2::new(x, y)).collect();
            let moved: Vec<Point2> = pts.iter().map(|p| p.rotated(th) + Point2::new(tx, ty)).collect();
            let a = curvature_profile(&pts, true).unwrap();
            let b = curvature_profile(&moved, true).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x.abs() - y.abs()).abs() <= 1e-6 * (1.0 + x.abs()));
            }
        }
    }
}
