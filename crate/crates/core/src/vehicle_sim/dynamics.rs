//! Single-track kinematic model with first-order actuator lag.

use serde::{Deserialize, Serialize};

use crate::geometry::{wrap_angle, Point2, Pose2D};

/// Vehicle state at the rear axle. `delta` is the realised steering angle,
/// which lags the commanded one.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    pub v: f64,
    pub theta: f64,
    pub delta: f64,
}

impl VehicleState {
    pub fn pose(&self) -> Pose2D {
        Pose2D::new(self.x, self.y, self.theta)
    }

    pub fn position(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }

    pub fn is_finite(&self) -> bool {
        [self.x, self.y, self.v, self.theta, self.delta]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Commanded steering angle and speed.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Action {
    pub delta_des: f64,
    pub v_des: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VehicleParams {
    pub wheelbase: f64,
    pub delta_max: f64,
    pub v_max: f64,
    pub a_max: f64,
    pub steer_rate_max: f64,
    pub body_length: f64,
    pub body_width: f64,
    /// Time constant of the speed and steering lag, seconds.
    pub actuator_tau: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            wheelbase: 0.33,
            delta_max: 0.4189,
            v_max: 2.0,
            a_max: 3.0,
            steer_rate_max: 3.2,
            body_length: 0.58,
            body_width: 0.31,
            actuator_tau: 0.05,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<(), String> {
        let fields = [
            ("wheelbase", self.wheelbase),
            ("delta_max", self.delta_max),
            ("v_max", self.v_max),
            ("a_max", self.a_max),
            ("steer_rate_max", self.steer_rate_max),
            ("body_length", self.body_length),
            ("body_width", self.body_width),
            ("actuator_tau", self.actuator_tau),
        ];
        for (name, v) in fields {
            if !(v > 0.0) || !v.is_finite() {
                return Err(format!("vehicle.{name} must be positive, got {v}"));
            }
        }
        Ok(())
    }

    /// Clamps a command into the actuator envelope.
    pub fn clamp_action(&self, action: Action) -> Action {
        Action {
            delta_des: action.delta_des.clamp(-self.delta_max, self.delta_max),
            v_des: action.v_des.clamp(0.0, self.v_max),
        }
    }
}

type Deriv = [f64; 5];

fn derivative(s: &Deriv, cmd: &Action, p: &VehicleParams) -> Deriv {
    let [_, _, v, theta, delta] = *s;
    let (sin, cos) = theta.sin_cos();
    let accel = ((cmd.v_des - v) / p.actuator_tau).clamp(-p.a_max, p.a_max);
    let steer_rate =
        ((cmd.delta_des - delta) / p.actuator_tau).clamp(-p.steer_rate_max, p.steer_rate_max);
    [
        v * cos,
        v * sin,
        accel,
        v * delta.tan() / p.wheelbase,
        steer_rate,
    ]
}

/// Advances the state by `dt` with one RK4 step.
///
/// The command is clamped into `[-delta_max, delta_max] × [0, v_max]` first,
/// and the resulting speed and steering angle are clamped to the same
/// envelope. Both clamps are silent.
pub fn step_dynamics(
    state: &VehicleState,
    action: &Action,
    params: &VehicleParams,
    dt: f64,
) -> VehicleState {
    let cmd = params.clamp_action(*action);
    let s0 = [state.x, state.y, state.v, state.theta, state.delta];
    let add = |a: &Deriv, k: &Deriv, h: f64| -> Deriv {
        let mut out = *a;
        for i in 0..5 {
            out[i] += h * k[i];
        }
        out
    };
    let k1 = derivative(&s0, &cmd, params);
    let k2 = derivative(&add(&s0, &k1, dt / 2.0), &cmd, params);
    let k3 = derivative(&add(&s0, &k2, dt / 2.0), &cmd, params);
    let k4 = derivative(&add(&s0, &k3, dt), &cmd, params);
    let mut s = s0;
    for i in 0..5 {
        s[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    VehicleState {
        x: s[0],
        y: s[1],
        v: s[2].clamp(0.0, params.v_max),
        theta: wrap_angle(s[3]),
        delta: s[4].clamp(-params.delta_max, params.delta_max),
    }
}
