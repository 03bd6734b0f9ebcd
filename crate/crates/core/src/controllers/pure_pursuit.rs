//! Geometric pure pursuit on a world-frame trajectory.

use serde::{Deserialize, Serialize};

use super::ControlError;
use crate::geometry::Point2;
use crate::vehicle_sim::{Action, VehicleParams, VehicleState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PurePursuitConfig {
    pub lookahead: f64,
    pub speed: f64,
}

impl Default for PurePursuitConfig {
    fn default() -> Self {
        Self {
            lookahead: 0.8,
            speed: 2.0,
        }
    }
}

impl PurePursuitConfig {
    pub fn validate(&self) -> Result<(), ControlError> {
        if !(self.lookahead > 0.0) || !(self.speed >= 0.0) {
            return Err(ControlError::InvalidConfig(format!(
                "pure pursuit needs lookahead > 0 and speed >= 0, got {} and {}",
                self.lookahead, self.speed
            )));
        }
        Ok(())
    }
}

/// Lookahead point and its distance from `origin`. Walks forward from the
/// closest point to the first point at least `lookahead` away and
/// interpolates the exact crossing on the bracketing segment. Falls back to
/// the last point when the whole trajectory is nearer than `lookahead`.
pub fn lookahead_point(
    origin: Point2,
    trajectory: &[Point2],
    lookahead: f64,
) -> Result<(Point2, f64), ControlError> {
    let closest = trajectory
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.distance(origin).total_cmp(&b.1.distance(origin)))
        .map(|(i, _)| i)
        .ok_or(ControlError::EmptyTrajectory)?;
    for i in closest..trajectory.len() {
        let d = trajectory[i].distance(origin);
        if d < lookahead {
            continue;
        }
        if i == closest {
            return Ok((trajectory[i], d));
        }
        // |a + t·(b − a) − origin| = lookahead, a inside and b outside the circle
        let a = trajectory[i - 1] - origin;
        let ab = trajectory[i] - trajectory[i - 1];
        let qa = ab.dot(ab);
        let qb = 2.0 * a.dot(ab);
        let qc = a.dot(a) - lookahead * lookahead;
        let t = ((-qb + (qb * qb - 4.0 * qa * qc).max(0.0).sqrt()) / (2.0 * qa)).clamp(0.0, 1.0);
        return Ok((trajectory[i - 1] + ab * t, lookahead));
    }
    let last = *trajectory.last().unwrap();
    Ok((last, last.distance(origin)))
}

/// Steering from the lateral error `e` of a goal point at distance `d`:
/// curvature `2|e|/d²`, angle `atan(curvature·wheelbase)·sign(e)`.
pub fn pure_pursuit_steering(e: f64, d: f64, wheelbase: f64) -> f64 {
    if d <= 0.0 || e == 0.0 {
        return 0.0;
    }
    let gamma = 2.0 * e.abs() / (d * d);
    (gamma * wheelbase).atan() * e.signum()
}

pub fn pure_pursuit_control(
    state: &VehicleState,
    trajectory: &[Point2],
    cfg: &PurePursuitConfig,
    params: &VehicleParams,
) -> Result<Action, ControlError> {
    let (goal, d) = lookahead_point(state.position(), trajectory, cfg.lookahead)?;
    let e = state.pose().to_local(goal).y;
    let delta = pure_pursuit_steering(e, d, params.wheelbase);
    Ok(Action {
        delta_des: delta.clamp(-params.delta_max, params.delta_max),
        v_des: cfg.speed.clamp(0.0, params.v_max),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn at_origin() -> VehicleState {
        VehicleState::default()
    }

    #[test]
    fn straight_ahead_gives_zero_steering() {
        let traj: Vec<Point2> = (0..10).map(|i| Point2::new(0.2 * i as f64, 0.0)).collect();
        let a = pure_pursuit_control(
            &at_origin(),
            &traj,
            &PurePursuitConfig::default(),
            &VehicleParams::default(),
        )
        .unwrap();
        assert_eq!(a.delta_des, 0.0);
        assert_eq!(a.v_des, 2.0);
    }

    #[test]
    fn hand_case() {
        // goal at distance 0.8 with lateral error 0.4
        let x = (0.8f64 * 0.8 - 0.4 * 0.4).sqrt();
        let goal = Point2::new(x, 0.4);
        let p = VehicleParams::default();
        let a =
            pure_pursuit_control(&at_origin(), &[goal], &PurePursuitConfig::default(), &p).unwrap();
        assert!((a.delta_des - 0.4125f64.atan()).abs() < 1e-12);
        // γ = 2·0.4/0.8² = 1.25, atan(1.25·0.33) = 0.391235579…
        assert!((a.delta_des - 0.391_235_579_127).abs() < 1e-6);
        let mirrored = pure_pursuit_control(
            &at_origin(),
            &[Point2::new(x, -0.4)],
            &PurePursuitConfig::default(),
            &p,
        )
        .unwrap();
        assert_eq!(mirrored.delta_des, -a.delta_des);
    }

    #[test]
    fn interpolates_on_bracketing_segment() {
        let traj = [
            Point2::new(0.0, 0.0),
            Point2::new(0.5, 0.0),
            Point2::new(1.0, 0.0),
            Point2::new(1.5, 0.0),
        ];
        let (g, d) = lookahead_point(Point2::new(0.0, 0.0), &traj, 0.8).unwrap();
        assert!((g.x - 0.8).abs() < 1e-12 && g.y == 0.0);
        assert_eq!(d, 0.8);
    }

    #[test]
    fn short_trajectory_uses_last_point() {
        let traj = [Point2::new(0.1, 0.0), Point2::new(0.3, 0.1)];
        let (g, d) = lookahead_point(Point2::new(0.0, 0.0), &traj, 0.8).unwrap();
        assert_eq!(g, traj[1]);
        assert!((d - traj[1].norm()).abs() < 1e-15);
    }

    #[test]
    fn empty_trajectory_is_an_error() {
        let r = pure_pursuit_control(
            &at_origin(),
            &[],
            &PurePursuitConfig::default(),
            &VehicleParams::default(),
        );
        assert!(matches!(r, Err(ControlError::EmptyTrajectory)));
    }

    proptest! {
        #[test]
        fn steering_is_antisymmetric(x in 0.1..3.0f64, y in -2.0..2.0f64, th in -3.0..3.0f64) {
            let p = VehicleParams::default();
            let cfg = PurePursuitConfig::default();
            let s = VehicleState { theta: th, ..Default::default() };
            let pose = s.pose();
            let left = pure_pursuit_control(&s, &[pose.to_world(Point2::new(x, y))], &cfg, &p).unwrap();
            let right = pure_pursuit_control(&s, &[pose.to_world(Point2::new(x, -y))], &cfg, &p).unwrap();
            prop_assert!((left.delta_des + right.delta_des).abs() < 1e-12);
        }

        #[test]
        fn points_beyond_lookahead_are_ignored(tail in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64), 0..6)) {
            let p = VehicleParams::default();
            let cfg = PurePursuitConfig::default();
            let mut traj = vec![Point2::new(0.0, 0.0), Point2::new(0.5, 0.1), Point2::new(1.0, 0.3)];
            let base = pure_pursuit_control(&at_origin(), &traj, &cfg, &p).unwrap();
            traj.extend(tail.iter().map(|&(x, y)| Point2::new(x, y) + Point2::new(10.0, 10.0)));
            let more = pure_pursuit_control(&at_origin(), &traj, &cfg, &p).unwrap();
            prop_assert_eq!(base, more);
        }
    }
}
