//! Linear time-varying MPC on the kinematic model `z = [x, y, v, θ]`,
//! `u = [a, δ]`.

use nalgebra::{DMatrix, DVector, Matrix4, Matrix4x2, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use super::qp::{qp_solve, QpProblem, QpSettings};
use super::ControlError;
use crate::geometry::{wrap_angle, Point2};
use crate::track::curvature_profile;
use crate::vehicle_sim::{Action, VehicleParams, VehicleState};

/// How the `R_d` weight enters the cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputPenalty {
    /// `Σ (u_{t+1} − u_t)ᵀ R_d (u_{t+1} − u_t)`
    #[default]
    Difference,
    /// `Σ u_tᵀ R_d u_t`
    Magnitude,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MpcConfig {
    pub horizon: usize,
    pub dt: f64,
    pub q_step: [f64; 4],
    pub q_final: [f64; 4],
    pub r_step: [f64; 2],
    pub r_diff: [f64; 2],
    pub input_penalty: InputPenalty,
    pub speed_bounds: [f64; 2],
    pub accel_bounds: [f64; 2],
    pub steer_bounds: [f64; 2],
    /// Per-second limits on |Δa| and |Δδ| between consecutive inputs.
    pub accel_rate_max: f64,
    pub steer_rate_max: f64,
    pub qp: QpSettings,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon: 10,
            dt: 0.1,
            q_step: [10.0, 10.0, 1.0, 1.0],
            q_final: [20.0, 20.0, 2.0, 2.0],
            r_step: [0.1, 0.5],
            r_diff: [0.1, 1.0],
            input_penalty: InputPenalty::Difference,
            speed_bounds: [0.0, 2.0],
            accel_bounds: [-3.0, 3.0],
            steer_bounds: [-0.4189, 0.4189],
            accel_rate_max: 15.0,
            steer_rate_max: 3.2,
            qp: QpSettings::default(),
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<(), ControlError> {
        let bad = |m: &str| Err(ControlError::InvalidConfig(format!("mpc: {m}")));
        if self.horizon < 1 {
            return bad("horizon must be at least 1");
        }
        if !(self.dt > 0.0) {
            return bad("dt must be positive");
        }
        let weights = self
            .q_step
            .iter()
            .chain(&self.q_final)
            .chain(&self.r_step)
            .chain(&self.r_diff);
        if weights.clone().any(|w| !(*w >= 0.0)) {
            return bad("weights must be non-negative");
        }
        for (name, b) in [
            ("speed_bounds", self.speed_bounds),
            ("accel_bounds", self.accel_bounds),
            ("steer_bounds", self.steer_bounds),
        ] {
            if !(b[0] <= b[1]) {
                return bad(&format!("{name} must be ordered min <= max"));
            }
        }
        if !(self.accel_rate_max >= 0.0) || !(self.steer_rate_max >= 0.0) {
            return bad("rate limits must be non-negative");
        }
        Ok(())
    }
}

/// Continuous-time kinematic model `ż = f(z, u)`.
pub fn kinematic_model(z: &Vector4<f64>, u: &Vector2<f64>, wheelbase: f64) -> Vector4<f64> {
    let (v, th) = (z[2], z[3]);
    Vector4::new(v * th.cos(), v * th.sin(), u[0], v * u[1].tan() / wheelbase)
}

/// Discrete affine model `z⁺ ≈ A z + B u + C` about `(z_r, u_r)`, from a
/// forward-Euler step of the first-order Taylor expansion.
pub fn linearize_dynamics(
    z_ref: &Vector4<f64>,
    u_ref: &Vector2<f64>,
    params: &VehicleParams,
    dt: f64,
) -> (Matrix4<f64>, Matrix4x2<f64>, Vector4<f64>) {
    let (v, th, delta) = (z_ref[2], z_ref[3], u_ref[1]);
    let (s, c) = th.sin_cos();
    let l = params.wheelbase;
    #[rustfmt::skip]
    let jz = Matrix4::new(
        0.0, 0.0, c, -v * s,
        0.0, 0.0, s, v * c,
        0.0, 0.0, 0.0, 0.0,
        0.0, 0.0, delta.tan() / l, 0.0,
    );
    #[rustfmt::skip]
    let ju = Matrix4x2::new(
        0.0, 0.0,
        0.0, 0.0,
        1.0, 0.0,
        0.0, v / (l * delta.cos().powi(2)),
    );
    let f = kinematic_model(z_ref, u_ref, l);
    let a = Matrix4::identity() + jz * dt;
    let b = ju * dt;
    let cvec = (f - jz * z_ref - ju * u_ref) * dt;
    (a, b, cvec)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePoint {
    pub z: Vector4<f64>,
    pub u: Vector2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcSolution {
    pub states: Vec<Vector4<f64>>,
    pub inputs: Vec<Vector2<f64>>,
    pub objective: f64,
    pub iterations: usize,
    /// Linear models used for each step, kept for residual checks.
    pub models: Vec<(Matrix4<f64>, Matrix4x2<f64>, Vector4<f64>)>,
}

impl MpcSolution {
    /// ‖z_{t+1} − (A z_t + B u_t + C)‖∞ over the horizon.
    pub fn dynamics_residual(&self) -> f64 {
        self.models
            .iter()
            .enumerate()
            .map(|(t, (a, b, c))| {
                (self.states[t + 1] - (a * self.states[t] + b * self.inputs[t] + c)).amax()
            })
            .fold(0.0, f64::max)
    }

    /// Largest bound or rate violation.
    pub fn bound_violation(&self, cfg: &MpcConfig) -> f64 {
        let over = |v: f64, b: [f64; 2]| (b[0] - v).max(v - b[1]).max(0.0);
        let mut worst: f64 = 0.0;
        for z in &self.states {
            worst = worst.max(over(z[2], cfg.speed_bounds));
        }
        for u in &self.inputs {
            worst = worst
                .max(over(u[0], cfg.accel_bounds))
                .max(over(u[1], cfg.steer_bounds));
        }
        for w in self.inputs.windows(2) {
            let d = w[1] - w[0];
            worst = worst
                .max(d[0].abs() - cfg.accel_rate_max * cfg.dt)
                .max(d[1].abs() - cfg.steer_rate_max * cfg.dt);
        }
        worst
    }
}

struct Layout {
    h: usize,
}

impl Layout {
    fn z(&self, t: usize) -> usize {
        4 * t
    }
    fn u(&self, t: usize) -> usize {
        4 * (self.h + 1) + 2 * t
    }
    fn s(&self, t: usize) -> usize {
        4 * (self.h + 1) + 2 * self.h + 2 * t
    }
    fn n(&self) -> usize {
        4 * (self.h + 1) + 2 * self.h + 2 * self.h.saturating_sub(1)
    }
}

/// Solves the tracking problem over `reference` (horizon + 1 points) from
/// `state`. `warm_start` is an earlier solution of the same size; it is
/// shifted by one step before use.
pub fn solve_mpc(
    state: &VehicleState,
    reference: &[ReferencePoint],
    cfg: &MpcConfig,
    params: &VehicleParams,
    warm_start: Option<&MpcSolution>,
) -> Result<MpcSolution, ControlError> {
    cfg.validate()?;
    let h = cfg.horizon;
    if reference.len() != h + 1 {
        return Err(ControlError::InvalidConfig(format!(
            "mpc reference has {} points, horizon {} needs {}",
            reference.len(),
            h,
            h + 1
        )));
    }
    let tol = 1e-6;
    if state.v < cfg.speed_bounds[0] - tol || state.v > cfg.speed_bounds[1] + tol {
        return Err(ControlError::Infeasible(format!(
            "initial speed {} outside speed_bounds [{}, {}]",
            state.v, cfg.speed_bounds[0], cfg.speed_bounds[1]
        )));
    }
    let lay = Layout { h };
    let n = lay.n();
    let n_slack = h.saturating_sub(1);
    let m = 4 * (h + 1) + 2 * n_slack;
    let mut p = DMatrix::zeros(n, n);
    let mut q = DVector::zeros(n);
    let mut constant = 0.0;
    let mut e = DMatrix::zeros(m, n);
    let mut b = DVector::zeros(m);
    let mut lower = DVector::from_element(n, f64::NEG_INFINITY);
    let mut upper = DVector::from_element(n, f64::INFINITY);

    let z0 = Vector4::new(state.x, state.y, state.v, state.theta);
    // heading reference unwrapped next to the current heading
    let mut theta_ref = Vec::with_capacity(h + 1);
    let mut prev = state.theta;
    for r in reference {
        let th = prev + wrap_angle(r.z[3] - prev);
        theta_ref.push(th);
        prev = th;
    }
    let z_ref = |t: usize| {
        let mut z = reference[t].z;
        z[3] = theta_ref[t];
        z
    };

    // quadratic tracking terms: (x − r)ᵀW(x − r) = xᵀWx − 2rᵀWx + rᵀWr
    let mut add_tracking =
        |p: &mut DMatrix<f64>, q: &mut DVector<f64>, idx: usize, w: f64, r: f64| {
            p[(idx, idx)] += 2.0 * w;
            q[idx] -= 2.0 * w * r;
            constant += w * r * r;
        };
    for t in 0..=h {
        let weights = if t == h { cfg.q_final } else { cfg.q_step };
        let zr = z_ref(t);
        for k in 0..4 {
            add_tracking(&mut p, &mut q, lay.z(t) + k, weights[k], zr[k]);
        }
    }
    for t in 0..h {
        for k in 0..2 {
            add_tracking(
                &mut p,
                &mut q,
                lay.u(t) + k,
                cfg.r_step[k],
                reference[t].u[k],
            );
            if cfg.input_penalty == InputPenalty::Magnitude {
                add_tracking(&mut p, &mut q, lay.u(t) + k, cfg.r_diff[k], 0.0);
            }
        }
    }
    for t in 0..n_slack {
        for k in 0..2 {
            if cfg.input_penalty == InputPenalty::Difference {
                add_tracking(&mut p, &mut q, lay.s(t) + k, cfg.r_diff[k], 0.0);
            }
        }
    }

    // z_0 = z_cur
    for k in 0..4 {
        e[(k, lay.z(0) + k)] = 1.0;
        b[k] = z0[k];
    }
    // z_{t+1} − A z_t − B u_t = C
    let mut models = Vec::with_capacity(h);
    for t in 0..h {
        let (a, bm, c) = linearize_dynamics(&z_ref(t), &reference[t].u, params, cfg.dt);
        let row = 4 * (t + 1);
        for i in 0..4 {
            e[(row + i, lay.z(t + 1) + i)] = 1.0;
            for j in 0..4 {
                e[(row + i, lay.z(t) + j)] -= a[(i, j)];
            }
            for j in 0..2 {
                e[(row + i, lay.u(t) + j)] -= bm[(i, j)];
            }
            b[row + i] = c[i];
        }
        models.push((a, bm, c));
    }
    // s_t = u_{t+1} − u_t
    for t in 0..n_slack {
        let row = 4 * (h + 1) + 2 * t;
        for k in 0..2 {
            e[(row + k, lay.s(t) + k)] = 1.0;
            e[(row + k, lay.u(t + 1) + k)] = -1.0;
            e[(row + k, lay.u(t) + k)] = 1.0;
        }
    }

    for t in 1..=h {
        lower[lay.z(t) + 2] = cfg.speed_bounds[0];
        upper[lay.z(t) + 2] = cfg.speed_bounds[1];
    }
    for t in 0..h {
        lower[lay.u(t)] = cfg.accel_bounds[0];
        upper[lay.u(t)] = cfg.accel_bounds[1];
        lower[lay.u(t) + 1] = cfg.steer_bounds[0];
        upper[lay.u(t) + 1] = cfg.steer_bounds[1];
    }
    for t in 0..n_slack {
        let da = cfg.accel_rate_max * cfg.dt;
        let dd = cfg.steer_rate_max * cfg.dt;
        lower[lay.s(t)] = -da;
        upper[lay.s(t)] = da;
        lower[lay.s(t) + 1] = -dd;
        upper[lay.s(t) + 1] = dd;
    }

    let warm = warm_start
        .filter(|w| w.inputs.len() == h)
        .map(|w| shifted_warm_start(w, &lay, &z0));
    let problem = QpProblem {
        p,
        q,
        eq_matrix: e,
        eq_rhs: b,
        lower,
        upper,
    };
    let sol = qp_solve(&problem, &cfg.qp, warm.as_ref())?;
    let x = &sol.x;
    let states = (0..=h)
        .map(|t| Vector4::from_fn(|k, _| x[lay.z(t) + k]))
        .collect();
    let inputs = (0..h)
        .map(|t| Vector2::from_fn(|k, _| x[lay.u(t) + k]))
        .collect();
    Ok(MpcSolution {
        states,
        inputs,
        objective: sol.objective + constant,
        iterations: sol.iterations,
        models,
    })
}

fn shifted_warm_start(prev: &MpcSolution, lay: &Layout, z0: &Vector4<f64>) -> DVector<f64> {
    let h = lay.h;
    let mut x = DVector::zeros(lay.n());
    for t in 0..=h {
        let z = if t == 0 {
            *z0
        } else {
            prev.states[(t + 1).min(h)]
        };
        x.rows_mut(lay.z(t), 4).copy_from(&z);
    }
    for t in 0..h {
        x.rows_mut(lay.u(t), 2)
            .copy_from(&prev.inputs[(t + 1).min(h - 1)]);
    }
    for t in 0..h.saturating_sub(1) {
        let d = x.rows(lay.u(t + 1), 2) - x.rows(lay.u(t), 2);
        x.rows_mut(lay.s(t), 2).copy_from(&d);
    }
    x
}

/// Reference states and inputs every `dt` along a path, starting at the
/// projection of the vehicle and advancing at the path speeds. Positions
/// past the end continue along the last segment.
pub fn build_reference(
    state: &VehicleState,
    path: &[Point2],
    speeds: &[f64],
    cfg: &MpcConfig,
    params: &VehicleParams,
) -> Result<Vec<ReferencePoint>, ControlError> {
    if path.len() < 2 {
        return Err(ControlError::EmptyTrajectory);
    }
    if speeds.len() != path.len() {
        return Err(ControlError::InvalidConfig(format!(
            "{} speeds for {} path points",
            speeds.len(),
            path.len()
        )));
    }
    let mut cum = vec![0.0];
    for w in path.windows(2) {
        cum.push(cum.last().unwrap() + w[0].distance(w[1]));
    }
    let locate = |s: f64| -> (usize, f64) {
        let last = path.len() - 2;
        let mut i = 0;
        while i < last && cum[i + 1] < s {
            i += 1;
        }
        let len = (cum[i + 1] - cum[i]).max(1e-12);
        (i, (s - cum[i]) / len)
    };
    // start at the vehicle's projection
    let origin = state.position();
    let mut s0 = 0.0;
    let mut best = f64::INFINITY;
    for i in 0..path.len() - 1 {
        let (d, t) = crate::geometry::point_segment_distance(origin, path[i], path[i + 1]);
        if d < best {
            best = d;
            s0 = cum[i] + t * (cum[i + 1] - cum[i]);
        }
    }
    let h = cfg.horizon;
    let mut positions = Vec::with_capacity(h + 1);
    let mut vels = Vec::with_capacity(h + 1);
    let mut headings = Vec::with_capacity(h + 1);
    let mut s = s0;
    for _ in 0..=h {
        let (i, t) = locate(s);
        positions.push(path[i] + (path[i + 1] - path[i]) * t);
        let v = (speeds[i] + (speeds[i + 1] - speeds[i]) * t.clamp(0.0, 1.0))
            .clamp(cfg.speed_bounds[0], cfg.speed_bounds[1]);
        vels.push(v);
        let d = path[i + 1] - path[i];
        headings.push(d.y.atan2(d.x));
        s += v * cfg.dt;
    }
    let gamma = if positions.windows(2).all(|w| w[0].distance(w[1]) > 1e-9) {
        curvature_profile(&positions, false).unwrap_or_else(|_| vec![0.0; h + 1])
    } else {
        vec![0.0; h + 1]
    };
    Ok((0..=h)
        .map(|t| {
            let a = if t < h {
                (vels[t + 1] - vels[t]) / cfg.dt
            } else {
                0.0
            };
            let delta = (params.wheelbase * gamma[t]).atan();
            ReferencePoint {
                z: Vector4::new(positions[t].x, positions[t].y, vels[t], headings[t]),
                u: Vector2::new(
                    a.clamp(cfg.accel_bounds[0], cfg.accel_bounds[1]),
                    delta.clamp(cfg.steer_bounds[0], cfg.steer_bounds[1]),
                ),
            }
        })
        .collect())
}

/// MPC executor keeping its previous solution as a warm start.
#[derive(Debug, Clone)]
pub struct MpcController {
    pub config: MpcConfig,
    warm: Option<MpcSolution>,
}

impl MpcController {
    pub fn new(config: MpcConfig) -> Result<Self, ControlError> {
        config.validate()?;
        Ok(Self { config, warm: None })
    }

    pub fn reset(&mut self) {
        self.warm = None;
    }

    pub fn last_solution(&self) -> Option<&MpcSolution> {
        self.warm.as_ref()
    }

    /// Tracks `path` and converts the first input into a speed and steering
    /// command: `v_des = v + a·dt`, `δ_des = δ`.
    pub fn control(
        &mut self,
        state: &VehicleState,
        path: &[Point2],
        speeds: &[f64],
        params: &VehicleParams,
    ) -> Result<Action, ControlError> {
        let reference = build_reference(state, path, speeds, &self.config, params)?;
        let mut clamped = *state;
        clamped.v = state
            .v
            .clamp(self.config.speed_bounds[0], self.config.speed_bounds[1]);
        let sol = solve_mpc(
            &clamped,
            &reference,
            &self.config,
            params,
            self.warm.as_ref(),
        )?;
        let u = sol.inputs[0];
        self.warm = Some(sol);
        Ok(params.clamp_action(Action {
            delta_des: u[1],
            v_des: state.v + u[0] * self.config.dt,
        }))
    }
}

/// Finite-difference Jacobians of [`kinematic_model`], for checks.
pub fn numeric_jacobians(
    z: &Vector4<f64>,
    u: &Vector2<f64>,
    wheelbase: f64,
    h: f64,
) -> (Matrix4<f64>, Matrix4x2<f64>) {
    let mut jz = Matrix4::zeros();
    let mut ju = Matrix4x2::zeros();
    for k in 0..4 {
        let mut zp = *z;
        let mut zm = *z;
        zp[k] += h;
        zm[k] -= h;
        let d =
            (kinematic_model(&zp, u, wheelbase) - kinematic_model(&zm, u, wheelbase)) / (2.0 * h);
        jz.set_column(k, &d);
    }
    for k in 0..2 {
        let mut up = *u;
        let mut um = *u;
        up[k] += h;
        um[k] -= h;
        let d =
            (kinematic_model(z, &up, wheelbase) - kinematic_model(z, &um, wheelbase)) / (2.0 * h);
        ju.set_column(k, &d);
    }
    (jz, ju)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn jacobians_match_finite_differences() {
        let p = VehicleParams::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let z = Vector4::new(
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
                rng.gen_range(0.0..2.0),
                rng.gen_range(-3.0..3.0),
            );
            let u = Vector2::new(rng.gen_range(-3.0..3.0), rng.gen_range(-0.4..0.4));
            let dt = 0.1;
            let (a, b, _) = linearize_dynamics(&z, &u, &p, dt);
            let (jz, ju) = numeric_jacobians(&z, &u, p.wheelbase, 1e-6);
            assert!(((a - Matrix4::identity()) / dt - jz).amax() < 1e-6);
            assert!((b / dt - ju).amax() < 1e-6);
        }
    }

    #[test]
    fn linearisation_is_exact_at_reference_and_second_order_nearby() {
        let p = VehicleParams::default();
        let dt = 0.1;
        let zr = Vector4::new(1.0, -0.5, 1.3, 0.7);
        let ur = Vector2::new(0.4, 0.2);
        let (a, b, c) = linearize_dynamics(&zr, &ur, &p, dt);
        let euler =
            |z: &Vector4<f64>, u: &Vector2<f64>| z + kinematic_model(z, u, p.wheelbase) * dt;
        assert!((a * zr + b * ur + c - euler(&zr, &ur)).amax() < 1e-14);
        let dz = Vector4::new(0.1, -0.2, 0.3, 0.2);
        let du = Vector2::new(0.5, 0.1);
        let err = |h: f64| {
            let z = zr + dz * h;
            let u = ur + du * h;
            (a * z + b * u + c - euler(&z, &u)).norm()
        };
        for h in [0.2, 0.1, 0.05] {
            let ratio = err(h) / err(h / 2.0);
            assert!((ratio - 4.0).abs() < 0.3, "ratio {ratio}");
        }
    }

    #[test]
    fn rest_structure() {
        let p = VehicleParams::default();
        let (a, b, c) = linearize_dynamics(&Vector4::zeros(), &Vector2::zeros(), &p, 0.1);
        let mut expected = Matrix4::identity();
        expected[(0, 2)] = 0.1;
        assert_eq!(a, expected);
        assert_eq!(b[(2, 0)], 0.1);
        assert_eq!(b[(3, 1)], 0.0);
        assert_eq!(c, Vector4::zeros());
    }

    fn straight_reference(cfg: &MpcConfig, v: f64) -> Vec<ReferencePoint> {
        (0..=cfg.horizon)
            .map(|t| ReferencePoint {
                z: Vector4::new(v * cfg.dt * t as f64, 0.0, v, 0.0),
                u: Vector2::zeros(),
            })
            .collect()
    }

    #[test]
    fn on_reference_stays_on_reference() {
        let cfg = MpcConfig::default();
        let p = VehicleParams::default();
        let state = VehicleState {
            v: 1.5,
            ..Default::default()
        };
        let sol = solve_mpc(&state, &straight_reference(&cfg, 1.5), &cfg, &p, None).unwrap();
        assert!(sol.objective.abs() < 1e-9, "{}", sol.objective);
        assert!(sol.inputs.iter().all(|u| u.amax() < 1e-6));
        assert!(sol.dynamics_residual() < 1e-6);
    }

    #[test]
    fn initial_speed_outside_bounds_is_infeasible() {
        let cfg = MpcConfig::default();
        let state = VehicleState {
            v: 2.5,
            ..Default::default()
        };
        let err = solve_mpc(
            &state,
            &straight_reference(&cfg, 2.0),
            &cfg,
            &VehicleParams::default(),
            None,
        )
        .unwrap_err();
        assert!(
            matches!(err, ControlError::Infeasible(ref m) if m.contains("speed")),
            "{err}"
        );
    }

    #[test]
    fn steers_towards_reference() {
        let cfg = MpcConfig::default();
        let p = VehicleParams::default();
        let state = VehicleState {
            y: 0.5,
            v: 2.0,
            ..Default::default()
        };
        let sol = solve_mpc(&state, &straight_reference(&cfg, 2.0), &cfg, &p, None).unwrap();
        assert!(sol.inputs[0][1] < 0.0);
        assert!(sol.dynamics_residual() < 1e-6);
        assert!(sol.bound_violation(&cfg) < 1e-6);
    }
}
