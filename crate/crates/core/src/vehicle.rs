//! Kinematic bicycle plant with actuator limits and a corridor-based collision proxy.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::raceline::{Point, Raceline};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
}

impl VehicleState {
    pub fn position(&self) -> Point {
        Point::new(self.x, self.y)
    }
}

/// Time derivative of a [`VehicleState`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateRate {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Command {
    pub delta: f64,
    pub v_cmd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub wheelbase: f64,
    pub dt_physics: f64,
    pub dt_control: f64,
    pub delta_max: f64,
    pub delta_rate_max: f64,
    pub a_max: f64,
    pub speed_gain: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            wheelbase: 0.33,
            dt_physics: 0.01,
            dt_control: 0.05,
            delta_max: 0.4189,
            delta_rate_max: PI,
            a_max: 3.0,
            speed_gain: 2.0,
        }
    }
}

impl SimConfig {
    /// Physics substeps per control step.
    pub fn substeps(&self) -> usize {
        (self.dt_control / self.dt_physics).round() as usize
    }

    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("wheelbase", self.wheelbase),
            ("dt_physics", self.dt_physics),
            ("dt_control", self.dt_control),
            ("delta_max", self.delta_max),
            ("delta_rate_max", self.delta_rate_max),
            ("a_max", self.a_max),
            ("speed_gain", self.speed_gain),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        let ratio = self.dt_control / self.dt_physics;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio.round() < 1.0 {
            return Err(format!(
                "dt_control ({}) must be an integer multiple of dt_physics ({})",
                self.dt_control, self.dt_physics
            ));
        }
        Ok(())
    }
}

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}

pub fn derivatives(s: &VehicleState, accel: f64, delta: f64, wheelbase: f64) -> StateRate {
    StateRate { x: s.v * s.theta.cos(), y: s.v * s.theta.sin(), theta: s.v / wheelbase * delta.tan(), v: accel }
}

fn offset(s: &VehicleState, k: &StateRate, h: f64) -> VehicleState {
    VehicleState { x: s.x + h * k.x, y: s.y + h * k.y, theta: s.theta + h * k.theta, v: s.v + h * k.v }
}

/// Classic RK4 with inputs held constant over `dt`.
pub fn rk4_step(s: &VehicleState, accel: f64, delta: f64, dt: f64, wheelbase: f64) -> VehicleState {
    let f = |st: &VehicleState| derivatives(st, accel, delta, wheelbase);
    let k1 = f(s);
    let k2 = f(&offset(s, &k1, dt / 2.0));
    let k3 = f(&offset(s, &k2, dt / 2.0));
    let k4 = f(&offset(s, &k3, dt));
    let w = dt / 6.0;
    VehicleState {
        x: s.x + w * (k1.x + 2.0 * k2.x + 2.0 * k3.x + k4.x),
        y: s.y + w * (k1.y + 2.0 * k2.y + 2.0 * k3.y + k4.y),
        theta: wrap_angle(s.theta + w * (k1.theta + 2.0 * k2.theta + 2.0 * k3.theta + k4.theta)),
        v: s.v + w * (k1.v + 2.0 * k2.v + 2.0 * k3.v + k4.v),
    }
}

pub fn speed_controller(v: f64, v_cmd: f64, cfg: &SimConfig) -> f64 {
    (cfg.speed_gain * (v_cmd - v)).clamp(-cfg.a_max, cfg.a_max)
}

/// Steering actually applied for one substep, starting from `prev`.
pub fn limit_steering(target: f64, prev: f64, cfg: &SimConfig) -> f64 {
    let target = target.clamp(-cfg.delta_max, cfg.delta_max);
    let step = cfg.delta_rate_max * cfg.dt_physics;
    prev + (target - prev).clamp(-step, step)
}

/// One zero-order-hold control interval. `observe` sees the state after every substep
/// together with the steering applied during it.
pub fn control_step_observed(
    state: &VehicleState,
    cmd: &Command,
    prev_delta: f64,
    cfg: &SimConfig,
    mut observe: impl FnMut(&VehicleState, f64),
) -> (VehicleState, f64) {
    let mut s = *state;
    let mut delta = prev_delta;
    for _ in 0..cfg.substeps() {
        delta = limit_steering(cmd.delta, delta, cfg);
        let accel = speed_controller(s.v, cmd.v_cmd, cfg);
        s = rk4_step(&s, accel, delta, cfg.dt_physics, cfg.wheelbase);
        observe(&s, delta);
    }
    (s, delta)
}

pub fn control_step(state: &VehicleState, cmd: &Command, prev_delta: f64, cfg: &SimConfig) -> (VehicleState, f64) {
    control_step_observed(state, cmd, prev_delta, cfg, |_, _| {})
}

/// Off-track iff the lateral error strictly exceeds the corridor half-width.
pub fn collision_check(raceline: &Raceline, state: &VehicleState) -> bool {
    raceline.lateral_error(state.position()).abs() > raceline.half_width()
}
