//! Minimum-curvature raceline: minimize Σγ² of the displaced path
//! `c_i + α_i·n̂_i` subject to per-point box bounds on α.
//!
//! Solved by projected gradient descent. Trial steps come from the
//! Barzilai-Borwein rule and are accepted by a backtracking test on the
//! projected step (sufficient decrease relative to the quadratic upper
//! model), so the objective never increases between iterates.

use serde::{Deserialize, Serialize};

use super::{menger, AlphaVector, Raceline, TrackCenterline, TrackError};
use crate::geometry::Point2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MinCurvatureConfig {
    pub max_iterations: usize,
    /// Stop once the projected-gradient step `‖α − P(α − ∇f)‖∞` drops below this.
    pub tolerance: f64,
    /// Keeps the path this far inside both boundaries.
    pub margin: f64,
    pub v_max: f64,
    pub a_lat_max: f64,
}

impl Default for MinCurvatureConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50_000,
            tolerance: 1e-10,
            margin: 0.0,
            v_max: 2.0,
            a_lat_max: 3.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MinCurvatureSolution {
    pub alpha: AlphaVector,
    pub raceline: Raceline,
    pub objective: f64,
    pub initial_objective: f64,
    pub iterations: usize,
    pub history: Vec<f64>,
}

/// Σγ² of the path displaced by `alpha`, summed over the same profile
/// [`curvature_profile`](super::curvature_profile) reports.
pub fn curvature_objective(track: &TrackCenterline, alpha: &[f64]) -> f64 {
    let normals = track.normals();
    let pts = displaced(track, &normals, alpha);
    triples(pts.len(), track.closed)
        .map(|(i0, i, i2, w)| w * menger(pts[i0], pts[i], pts[i2]).powi(2))
        .sum()
}

/// Consecutive index triples with their multiplicity in the profile. Open
/// curves copy the first and last interior values onto the endpoints, so
/// those triples count twice.
fn triples(n: usize, closed: bool) -> impl Iterator<Item = (usize, usize, usize, f64)> {
    let range = if closed { 0..n } else { 1..n - 1 };
    range.map(move |i| {
        let w = if closed {
            1.0
        } else {
            1.0 + f64::from(u8::from(i == 1)) + f64::from(u8::from(i == n - 2))
        };
        ((i + n - 1) % n, i, (i + 1) % n, w)
    })
}

fn displaced(track: &TrackCenterline, normals: &[Point2], alpha: &[f64]) -> Vec<Point2> {
    track
        .centers
        .iter()
        .zip(normals)
        .zip(alpha)
        .map(|((&c, &nrm), &a)| c + nrm * a)
        .collect()
}

/// Objective and gradient with respect to α.
fn objective_and_gradient(
    track: &TrackCenterline,
    normals: &[Point2],
    alpha: &[f64],
) -> (f64, Vec<f64>) {
    let pts = displaced(track, normals, alpha);
    let n = pts.len();
    let mut grad_pts = vec![Point2::default(); n];
    let mut f = 0.0;
    for (i0, i, i2, w) in triples(n, track.closed) {
        let (k, g0, g1, g2) = menger_with_gradient(pts[i0], pts[i], pts[i2]);
        f += w * k * k;
        let scale = 2.0 * w * k;
        grad_pts[i0] = grad_pts[i0] + g0 * scale;
        grad_pts[i] = grad_pts[i] + g1 * scale;
        grad_pts[i2] = grad_pts[i2] + g2 * scale;
    }
    let grad = grad_pts
        .iter()
        .zip(normals)
        .map(|(g, nrm)| g.dot(*nrm))
        .collect();
    (f, grad)
}

/// Menger curvature `κ = 2·(a×b)/(|a||b||c|)` with `a = p1−p0`, `b = p2−p1`,
/// `c = p2−p0`, and its gradient with respect to each of the three points.
fn menger_with_gradient(p0: Point2, p1: Point2, p2: Point2) -> (f64, Point2, Point2, Point2) {
    let a = p1 - p0;
    let b = p2 - p1;
    let c = p2 - p0;
    let (la, lb, lc) = (a.norm(), b.norm(), c.norm());
    let denom = la * lb * lc;
    if denom == 0.0 {
        let z = Point2::default();
        return (0.0, z, z, z);
    }
    let cross = a.cross(b);
    let k = 2.0 * cross / denom;
    // d(cross)/dp
    let dc0 = Point2::new(-b.y, b.x);
    let dc2 = Point2::new(-a.y, a.x);
    let dc1 = Point2::new(b.y + a.y, -b.x - a.x);
    // d(log |·|)/dp for each side length
    let ua = a * (1.0 / (la * la));
    let ub = b * (1.0 / (lb * lb));
    let uc = c * (1.0 / (lc * lc));
    let s = 2.0 / denom;
    let g0 = dc0 * s - (-ua - uc) * k;
    let g1 = dc1 * s - (ua - ub) * k;
    let g2 = dc2 * s - (ub + uc) * k;
    (k, g0, g1, g2)
}

pub fn optimize_min_curvature(
    track: &TrackCenterline,
    config: &MinCurvatureConfig,
) -> Result<MinCurvatureSolution, TrackError> {
    let n = track.len();
    let lower: Vec<f64> = track
        .half_width_right
        .iter()
        .map(|w| -(w - config.margin))
        .collect();
    let upper: Vec<f64> = track
        .half_width_left
        .iter()
        .map(|w| w - config.margin)
        .collect();
    if lower.iter().zip(&upper).any(|(l, u)| l > u) {
        return Err(TrackError::InvalidArgument(format!(
            "margin {} exceeds a half width",
            config.margin
        )));
    }
    let project = |x: &[f64]| -> Vec<f64> {
        x.iter()
            .zip(lower.iter().zip(&upper))
            .map(|(&v, (&l, &u))| v.clamp(l, u))
            .collect()
    };
    let normals = track.normals();

    let mut alpha = project(&vec![0.0; n]);
    let (mut f, mut g) = objective_and_gradient(track, &normals, &alpha);
    let initial_objective = f;
    let mut history = vec![f];
    let mut step = 1e-3;

    for iteration in 0..config.max_iterations {
        let trial: Vec<f64> = alpha.iter().zip(&g).map(|(a, gi)| a - gi).collect();
        let pg = alpha
            .iter()
            .zip(project(&trial))
            .map(|(a, p)| (a - p).abs())
            .fold(0.0, f64::max);
        if pg <= config.tolerance || f == 0.0 {
            return Ok(finish(
                track,
                &normals,
                alpha,
                f,
                initial_objective,
                iteration,
                history,
                config,
            )?);
        }

        let mut t = step;
        let (cand, fc, gc) = loop {
            let moved: Vec<f64> = alpha.iter().zip(&g).map(|(a, gi)| a - t * gi).collect();
            let cand = project(&moved);
            let d: Vec<f64> = cand.iter().zip(&alpha).map(|(c, a)| c - a).collect();
            let gd: f64 = d.iter().zip(&g).map(|(di, gi)| di * gi).sum();
            let dd: f64 = d.iter().map(|di| di * di).sum();
            let (fc, gc) = objective_and_gradient(track, &normals, &cand);
            if fc <= f + gd + dd / (2.0 * t) {
                break (cand, fc, gc);
            }
            t *= 0.5;
            if t < 1e-30 {
                // No representable descent remains along the projected
                // gradient; the current iterate is stationary to precision.
                return Ok(finish(
                    track,
                    &normals,
                    alpha,
                    f,
                    initial_objective,
                    iteration,
                    history,
                    config,
                )?);
            }
        };

        let s: Vec<f64> = cand.iter().zip(&alpha).map(|(c, a)| c - a).collect();
        let y: Vec<f64> = gc.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let ss: f64 = s.iter().map(|a| a * a).sum();
        step = if sy > 0.0 {
            (ss / sy).clamp(1e-12, 1e6)
        } else {
            (t * 2.0).min(1e6)
        };

        if fc > f {
            // rounding noise at a stationary point
            return Ok(finish(
                track,
                &normals,
                alpha,
                f,
                initial_objective,
                iteration,
                history,
                config,
            )?);
        }
        alpha = cand;
        f = fc;
        g = gc;
        history.push(f);
    }
    Err(TrackError::NoConvergence {
        iterations: config.max_iterations,
        objective: f,
        last_alpha: alpha,
        history,
    })
}

#[allow(clippy::too_many_arguments)]
fn finish(
    track: &TrackCenterline,
    normals: &[Point2],
    alpha: Vec<f64>,
    objective: f64,
    initial_objective: f64,
    iterations: usize,
    history: Vec<f64>,
    config: &MinCurvatureConfig,
) -> Result<MinCurvatureSolution, TrackError> {
    let pts = displaced(track, normals, &alpha);
    let raceline = Raceline::from_positions(&pts, track.closed, config.v_max, config.a_lat_max)?;
    Ok(MinCurvatureSolution {
        alpha: AlphaVector { alpha },
        raceline,
        objective,
        initial_objective,
        iterations,
        history,
    })
}
