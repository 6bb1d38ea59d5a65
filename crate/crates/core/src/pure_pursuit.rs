//! Pure Pursuit steering with selectable (lookahead, gain) sources.
//!
//! The controller owns a per-component exponential smoother and a last-value-wins slot
//! for externally supplied parameters. When the slot goes stale the hand-designed teacher
//! schedule takes over until a fresh value arrives.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raceline::{Point, Raceline};
use crate::vehicle::{Command, VehicleState};

pub const LOOKAHEAD_MIN: f64 = 0.35;
pub const LOOKAHEAD_MAX: f64 = 4.0;
pub const GAIN_MIN: f64 = 0.45;
pub const GAIN_MAX: f64 = 1.15;
/// Steering clip applied to the Pure Pursuit output [rad].
pub const STEER_LIMIT: f64 = 0.35;
pub const SMOOTHING: f64 = 0.2;
pub const DEFAULT_STALE_TIMEOUT: f64 = 0.2;

pub const ADAPTIVE_LOOKAHEAD_MIN: f64 = 1.0;
pub const ADAPTIVE_LOOKAHEAD_MAX: f64 = 2.5;

// Teacher gain schedule anchors.
const TEACHER_V_MIN: f64 = 3.0;
const TEACHER_V_MAX: f64 = 18.0;
const TEACHER_G_AT_V_MIN: f64 = 0.9;
const TEACHER_G_AT_V_MAX: f64 = 0.65;

#[derive(Debug, Error, PartialEq)]
pub enum PpError {
    #[error("lookahead distance must be positive, got {0}")]
    NonPositiveLookahead(f64),
    #[error("adaptive speed bounds must satisfy v_lo < v_hi, got [{0}, {1}]")]
    BadSpeedBounds(f64, f64),
    #[error("staleness timeout must be positive, got {0}")]
    BadTimeout(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PpParams {
    pub lookahead: f64,
    pub gain: f64,
}

impl PpParams {
    pub fn new(lookahead: f64, gain: f64) -> Self {
        Self { lookahead, gain }
    }

    pub fn clipped(self) -> Self {
        Self {
            lookahead: self.lookahead.clamp(LOOKAHEAD_MIN, LOOKAHEAD_MAX),
            gain: self.gain.clamp(GAIN_MIN, GAIN_MAX),
        }
    }

    pub fn in_bounds(&self) -> bool {
        (LOOKAHEAD_MIN..=LOOKAHEAD_MAX).contains(&self.lookahead) && (GAIN_MIN..=GAIN_MAX).contains(&self.gain)
    }
}

/// Episode-start value of the smoother.
pub const SMOOTHER_INIT: PpParams = PpParams { lookahead: 1.0, gain: 0.9 };

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Smoother {
    pub state: PpParams,
    pub beta_lookahead: f64,
    pub beta_gain: f64,
}

impl Smoother {
    pub fn new(init: PpParams) -> Self {
        Self { state: init, beta_lookahead: SMOOTHING, beta_gain: SMOOTHING }
    }

    pub fn smooth(&mut self, raw: PpParams) -> PpParams {
        self.state = PpParams {
            lookahead: self.state.lookahead + self.beta_lookahead * (raw.lookahead - self.state.lookahead),
            gain: self.state.gain + self.beta_gain * (raw.gain - self.state.gain),
        };
        self.state
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParamSource {
    Fixed { lookahead: f64, gain: f64 },
    AdaptiveLinear { v_lo: f64, v_hi: f64, gain: f64 },
    Teacher,
    External { timeout: f64 },
}

impl ParamSource {
    pub fn validate(&self) -> Result<(), PpError> {
        match *self {
            ParamSource::Fixed { lookahead, .. } if lookahead <= 0.0 => Err(PpError::NonPositiveLookahead(lookahead)),
            ParamSource::AdaptiveLinear { v_lo, v_hi, .. } if !(v_lo < v_hi) => {
                Err(PpError::BadSpeedBounds(v_lo, v_hi))
            }
            ParamSource::External { timeout } if !(timeout > 0.0) => Err(PpError::BadTimeout(timeout)),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Rl,
    Teacher,
    Fixed,
    Adaptive,
    Mpc,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Rl => "rl",
            Mode::Teacher => "teacher",
            Mode::Fixed => "fixed",
            Mode::Adaptive => "adaptive",
            Mode::Mpc => "mpc",
        }
    }
}

/// Maps `point` into the vehicle frame (x forward, y left).
pub fn to_vehicle_frame(pose: &VehicleState, point: Point) -> (f64, f64) {
    let (dx, dy) = (point.x - pose.x, point.y - pose.y);
    let (s, c) = pose.theta.sin_cos();
    (c * dx + s * dy, -s * dx + c * dy)
}

/// Pure Pursuit curvature command scaled by `gain`, clipped to the steering limit.
pub fn pp_steering(y_prime: f64, lookahead: f64, gain: f64) -> Result<f64, PpError> {
    if !(lookahead > 0.0) {
        return Err(PpError::NonPositiveLookahead(lookahead));
    }
    Ok((gain * 2.0 * y_prime / (lookahead * lookahead)).clamp(-STEER_LIMIT, STEER_LIMIT))
}

pub fn teacher_lookahead(v: f64, kappa_max: f64) -> f64 {
    (0.50 + 0.28 * v - 3.5 * kappa_max).clamp(LOOKAHEAD_MIN, LOOKAHEAD_MAX)
}

pub fn teacher_gain(v: f64) -> f64 {
    let slope = (TEACHER_G_AT_V_MAX - TEACHER_G_AT_V_MIN) / (TEACHER_V_MAX - TEACHER_V_MIN);
    let intercept = TEACHER_G_AT_V_MIN - slope * TEACHER_V_MIN;
    (slope * v + intercept).clamp(GAIN_MIN, GAIN_MAX)
}

pub fn teacher_params(v: f64, kappa_max: f64) -> PpParams {
    PpParams { lookahead: teacher_lookahead(v, kappa_max), gain: teacher_gain(v) }
}

/// Velocity-linear lookahead between the adaptive bounds.
pub fn adaptive_lookahead(v: f64, v_lo: f64, v_hi: f64) -> f64 {
    let t = (v - v_lo) / (v_hi - v_lo);
    (ADAPTIVE_LOOKAHEAD_MIN + t * (ADAPTIVE_LOOKAHEAD_MAX - ADAPTIVE_LOOKAHEAD_MIN))
        .clamp(ADAPTIVE_LOOKAHEAD_MIN, ADAPTIVE_LOOKAHEAD_MAX)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PpOutput {
    pub command: Command,
    /// Parameters used for this step, after smoothing where it applies.
    pub params: PpParams,
    pub mode: Mode,
    pub nearest: usize,
    pub kappa_max: f64,
    pub target: Point,
    pub y_prime: f64,
}

#[derive(Debug, Clone)]
pub struct PurePursuit {
    source: ParamSource,
    smoother: Smoother,
    smoother_init: PpParams,
    latest: Option<(PpParams, f64)>,
}

impl PurePursuit {
    pub fn new(source: ParamSource) -> Result<Self, PpError> {
        Self::with_smoother_init(source, SMOOTHER_INIT)
    }

    pub fn with_smoother_init(source: ParamSource, init: PpParams) -> Result<Self, PpError> {
        source.validate()?;
        Ok(Self { source, smoother: Smoother::new(init), smoother_init: init, latest: None })
    }

    pub fn source(&self) -> &ParamSource {
        &self.source
    }

    pub fn smoother(&self) -> &Smoother {
        &self.smoother
    }

    pub fn reset(&mut self) {
        self.smoother = Smoother::new(self.smoother_init);
        self.latest = None;
    }

    /// Stores an externally chosen parameter pair received at time `now`.
    pub fn receive(&mut self, params: PpParams, now: f64) {
        self.latest = Some((params.clipped(), now));
    }

    pub fn last_receipt(&self) -> Option<f64> {
        self.latest.map(|(_, t)| t)
    }

    pub fn step(&mut self, state: &VehicleState, raceline: &Raceline, now: f64) -> PpOutput {
        let nearest = raceline.nearest_index(state.position());
        let kappa_max = raceline.taps(nearest).kappa_max;
        let v = state.v;
        let (params, mode) = match self.source {
            ParamSource::Fixed { lookahead, gain } => (PpParams { lookahead, gain }, Mode::Fixed),
            ParamSource::AdaptiveLinear { v_lo, v_hi, gain } => {
                (PpParams { lookahead: adaptive_lookahead(v, v_lo, v_hi), gain }, Mode::Adaptive)
            }
            ParamSource::Teacher => (self.smoother.smooth(teacher_params(v, kappa_max)), Mode::Teacher),
            ParamSource::External { timeout } => match self.latest {
                Some((p, at)) if now - at <= timeout => (self.smoother.smooth(p), Mode::Rl),
                _ => (self.smoother.smooth(teacher_params(v, kappa_max)), Mode::Teacher),
            },
        };
        let target = raceline.point_along(nearest, params.lookahead);
        let (_, y_prime) = to_vehicle_frame(state, target);
        // Sources validate lookahead > 0 and every path clips or smooths inside bounds.
        let gamma = pp_steering(y_prime, params.lookahead, params.gain).unwrap_or(0.0);
        PpOutput {
            command: Command { delta: gamma, v_cmd: raceline.v_max(nearest) },
            params,
            mode,
            nearest,
            kappa_max,
            target,
            y_prime,
        }
    }
}
