//! Episodic racing environment: the learned policy picks (lookahead, gain), Pure Pursuit
//! turns them into steering, and the bicycle model advances one control interval.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pure_pursuit::{
    teacher_params, Mode, ParamSource, PpParams, PurePursuit, DEFAULT_STALE_TIMEOUT, SMOOTHER_INIT,
};
use crate::raceline::{progress_count, CurvatureTaps, Point, Raceline};
use crate::vehicle::{collision_check, control_step_observed, Command, SimConfig, VehicleState};

pub const OBS_DIM: usize = 5;
const SPAWN_LATERAL_JITTER: f64 = 0.1;
const SPAWN_HEADING_JITTER: f64 = 0.05;
const SPAWN_SPEED_FRACTION: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("step called on a finished episode; call reset first")]
    EpisodeDone,
    #[error("invalid environment config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Observation {
    pub v: f64,
    pub kappa0: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    pub dkappa: f64,
}

impl Observation {
    pub fn from_taps(v: f64, t: &CurvatureTaps) -> Self {
        Self { v, kappa0: t.kappa0, kappa1: t.kappa1, kappa2: t.kappa2, dkappa: t.dkappa }
    }

    pub fn to_array(&self) -> [f64; OBS_DIM] {
        [self.v, self.kappa0, self.kappa1, self.kappa2, self.dkappa]
    }

    pub fn kappa_max(&self) -> f64 {
        self.kappa0.max(self.kappa1).max(self.kappa2)
    }
}

pub fn observe(state: &VehicleState, raceline: &Raceline) -> Observation {
    let i = raceline.nearest_index(state.position());
    Observation::from_taps(state.v, &raceline.taps(i))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardWeights {
    pub speed: f64,
    pub lookahead_teacher: f64,
    pub gain_teacher: f64,
    pub lookahead_jerk: f64,
    pub gain_jerk: f64,
    pub curvature: f64,
    pub cross: f64,
    pub pre_shorten: f64,
    pub collision: f64,
    pub slow: f64,
    pub progress: f64,
    pub clip_min: f64,
    pub clip_max: f64,
    /// Curvature above which a bend counts as pronounced [1/m].
    pub kappa_bend: f64,
    /// Speed below which the vehicle counts as slow [m/s].
    pub v_slow: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            speed: 1.8,
            lookahead_teacher: 3.0,
            gain_teacher: 0.0,
            lookahead_jerk: 0.4,
            gain_jerk: 0.0,
            curvature: 1.5,
            cross: 2.0,
            pre_shorten: 1.5,
            collision: 10.0,
            slow: 0.5,
            progress: 1.0,
            clip_min: -30.0,
            clip_max: 100.0,
            kappa_bend: 0.3,
            v_slow: 0.5,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<(), String> {
        let w = [
            self.speed,
            self.lookahead_teacher,
            self.gain_teacher,
            self.lookahead_jerk,
            self.gain_jerk,
            self.curvature,
            self.cross,
            self.pre_shorten,
            self.collision,
            self.slow,
            self.progress,
        ];
        if w.iter().any(|&x| !(x >= 0.0)) {
            return Err("reward weights must be non-negative".into());
        }
        if !(self.clip_min < self.clip_max) {
            return Err("reward clip_min must be below clip_max".into());
        }
        Ok(())
    }
}

/// Speed-only lookahead ceiling under which pre-shortening before a bend is rewarded.
pub fn pre_shorten_ceiling(v: f64) -> f64 {
    0.50 + 0.28 * v
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardContext {
    pub v: f64,
    pub smoothed: PpParams,
    pub prev_smoothed: PpParams,
    pub taps: CurvatureTaps,
    /// Smoothed local curvature magnitude.
    pub local_curvature: f64,
    pub progress: f64,
    pub collision: bool,
    pub slow: bool,
    pub teacher: PpParams,
}

/// Signed contribution of every reward term before clipping.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RewardTerms {
    pub speed: f64,
    pub lookahead_teacher: f64,
    pub gain_teacher: f64,
    pub lookahead_jerk: f64,
    pub gain_jerk: f64,
    pub curvature: f64,
    pub cross: f64,
    pub pre_shorten: f64,
    pub collision: f64,
    pub slow: f64,
    pub progress: f64,
}

impl RewardTerms {
    pub fn total(&self) -> f64 {
        self.speed
            + self.lookahead_teacher
            + self.gain_teacher
            + self.lookahead_jerk
            + self.gain_jerk
            + self.curvature
            + self.cross
            + self.pre_shorten
            + self.collision
            + self.slow
            + self.progress
    }
}

pub fn reward_terms(c: &RewardContext, w: &RewardWeights) -> RewardTerms {
    let indicator = |b: bool| if b { 1.0 } else { 0.0 };
    let kappa_max = c.taps.kappa_max;
    let bend = kappa_max > w.kappa_bend;
    let shortened = c.smoothed.lookahead <= pre_shorten_ceiling(c.v);
    RewardTerms {
        speed: w.speed * c.v,
        lookahead_teacher: -w.lookahead_teacher * (c.smoothed.lookahead - c.teacher.lookahead).abs(),
        gain_teacher: -w.gain_teacher * (c.smoothed.gain - c.teacher.gain).abs(),
        lookahead_jerk: -w.lookahead_jerk * (c.smoothed.lookahead - c.prev_smoothed.lookahead).abs(),
        gain_jerk: -w.gain_jerk * (c.smoothed.gain - c.prev_smoothed.gain).abs(),
        curvature: -w.curvature * c.local_curvature.abs(),
        cross: -w.cross * c.smoothed.lookahead * kappa_max,
        pre_shorten: w.pre_shorten * indicator(bend && shortened),
        collision: -w.collision * indicator(c.collision),
        slow: -w.slow * indicator(c.slow),
        progress: w.progress * c.progress,
    }
}

pub fn compute_reward(c: &RewardContext, w: &RewardWeights) -> f64 {
    reward_terms(c, w).total().clamp(w.clip_min, w.clip_max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub sim: SimConfig,
    pub weights: RewardWeights,
    pub max_steps: usize,
    pub laps: usize,
    pub spawn_jitter: bool,
    /// When set, the gain component of every action is replaced by this constant.
    pub gain_pin: Option<f64>,
    pub stale_timeout: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            sim: SimConfig::default(),
            weights: RewardWeights::default(),
            max_steps: 6000,
            laps: 2,
            spawn_jitter: true,
            gain_pin: None,
            stale_timeout: DEFAULT_STALE_TIMEOUT,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        self.sim.validate().map_err(EnvError::Config)?;
        self.weights.validate().map_err(EnvError::Config)?;
        if self.max_steps == 0 || self.laps == 0 {
            return Err(EnvError::Config("max_steps and laps must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DoneFlags {
    pub collision: bool,
    pub timeout: bool,
    pub laps_complete: bool,
}

impl DoneFlags {
    pub fn any(&self) -> bool {
        self.collision || self.timeout || self.laps_complete
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    /// Action after clipping (and gain pinning), before smoothing.
    pub raw: PpParams,
    /// Smoothed parameters forwarded to Pure Pursuit.
    pub applied: PpParams,
    pub teacher: PpParams,
    pub mode: Mode,
    pub command: Command,
    pub applied_delta: f64,
    pub lateral_error: f64,
    pub nearest: usize,
    pub progress: usize,
    pub terms: RewardTerms,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub obs: Observation,
    pub reward: f64,
    pub done: DoneFlags,
    pub info: StepInfo,
}

#[derive(Debug, Clone)]
pub struct RacingEnv {
    raceline: Raceline,
    config: EnvConfig,
    controller: PurePursuit,
    rng: ChaCha8Rng,
    state: VehicleState,
    delta: f64,
    time: f64,
    nearest: usize,
    steps: usize,
    passed: usize,
    prev_smoothed: PpParams,
    done: Option<DoneFlags>,
}

impl RacingEnv {
    pub fn new(raceline: Raceline, config: EnvConfig, seed: u64) -> Result<Self, EnvError> {
        config.validate()?;
        let init = match config.gain_pin {
            Some(g) => PpParams { gain: g, ..SMOOTHER_INIT },
            None => SMOOTHER_INIT,
        };
        let controller = PurePursuit::with_smoother_init(ParamSource::External { timeout: config.stale_timeout }, init)
            .map_err(|e| EnvError::Config(e.to_string()))?;
        let mut env = Self {
            raceline,
            config,
            controller,
            rng: ChaCha8Rng::seed_from_u64(seed),
            state: VehicleState::default(),
            delta: 0.0,
            time: 0.0,
            nearest: 0,
            steps: 0,
            passed: 0,
            prev_smoothed: init,
            done: None,
        };
        env.place(0, 0.0, 0.0);
        Ok(env)
    }

    pub fn raceline(&self) -> &Raceline {
        &self.raceline
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn state(&self) -> &VehicleState {
        &self.state
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn laps_completed(&self) -> usize {
        self.passed / self.raceline.len()
    }

    pub fn observation(&self) -> Observation {
        Observation::from_taps(self.state.v, &self.raceline.taps(self.nearest))
    }

    /// Teacher parameters for the current state.
    pub fn teacher(&self) -> PpParams {
        teacher_params(self.state.v, self.raceline.taps(self.nearest).kappa_max)
    }

    /// Starts a new episode at a random waypoint. `Some(seed)` reseeds the generator first.
    pub fn reset(&mut self, seed: Option<u64>) -> Observation {
        if let Some(s) = seed {
            self.rng = ChaCha8Rng::seed_from_u64(s);
        }
        let i = self.rng.random_range(0..self.raceline.len());
        let (lat, head) = if self.config.spawn_jitter {
            (
                self.rng.random_range(-SPAWN_LATERAL_JITTER..=SPAWN_LATERAL_JITTER),
                self.rng.random_range(-SPAWN_HEADING_JITTER..=SPAWN_HEADING_JITTER),
            )
        } else {
            (0.0, 0.0)
        };
        self.place(i, lat, head);
        self.observation()
    }

    /// Starts a new episode at waypoint `index` with the given lateral and heading offsets.
    pub fn reset_at(&mut self, index: usize, lateral: f64, heading: f64) -> Observation {
        self.place(index % self.raceline.len(), lateral, heading);
        self.observation()
    }

    fn place(&mut self, i: usize, lateral: f64, heading_offset: f64) {
        let p = self.raceline.position(i);
        let h = self.raceline.tangent_heading(i);
        self.state = VehicleState {
            x: p.x - lateral * h.sin(),
            y: p.y + lateral * h.cos(),
            theta: crate::vehicle::wrap_angle(h + heading_offset),
            v: SPAWN_SPEED_FRACTION * self.raceline.v_max(i),
        };
        self.nearest = self.raceline.nearest_index(self.state.position());
        self.delta = 0.0;
        self.time = 0.0;
        self.steps = 0;
        self.passed = 0;
        self.controller.reset();
        self.prev_smoothed = self.controller.smoother().state;
        self.done = None;
    }

    pub fn step(&mut self, action: [f64; 2]) -> Result<StepResult, EnvError> {
        if self.done.is_some() {
            return Err(EnvError::EpisodeDone);
        }
        let mut raw = PpParams::new(action[0], action[1]).clipped();
        if let Some(g) = self.config.gain_pin {
            raw.gain = g;
        }
        let obs = self.observation();
        let taps = self.raceline.taps(self.nearest);
        let local_curvature = self.raceline.smoothed_curvature(self.nearest);
        let teacher = teacher_params(obs.v, taps.kappa_max);

        // The action is always delivered fresh inside the environment.
        self.controller.receive(raw, self.time);
        let pp = self.controller.step(&self.state, &self.raceline, self.time);

        let raceline = &self.raceline;
        let mut collided = false;
        let (state, delta) = control_step_observed(&self.state, &pp.command, self.delta, &self.config.sim, |s, _| {
            collided |= collision_check(raceline, s);
        });
        self.state = state;
        self.delta = delta;
        self.time += self.config.sim.dt_control;
        self.steps += 1;

        let prev_nearest = self.nearest;
        self.nearest = self.raceline.nearest_index(self.state.position());
        let progress = progress_count(prev_nearest, self.nearest, self.raceline.len());
        self.passed += progress;

        let ctx = RewardContext {
            v: obs.v,
            smoothed: pp.params,
            prev_smoothed: self.prev_smoothed,
            taps,
            local_curvature,
            progress: progress as f64,
            collision: collided,
            slow: obs.v < self.config.weights.v_slow,
            teacher,
        };
        let terms = reward_terms(&ctx, &self.config.weights);
        let reward = terms.total().clamp(self.config.weights.clip_min, self.config.weights.clip_max);
        self.prev_smoothed = pp.params;

        let done = DoneFlags {
            collision: collided,
            laps_complete: self.passed >= self.config.laps * self.raceline.len(),
            timeout: self.steps >= self.config.max_steps,
        };
        if done.any() {
            self.done = Some(done);
        }
        Ok(StepResult {
            obs: self.observation(),
            reward,
            done,
            info: StepInfo {
                raw,
                applied: pp.params,
                teacher,
                mode: pp.mode,
                command: pp.command,
                applied_delta: delta,
                lateral_error: self.raceline.lateral_error(Point::new(self.state.x, self.state.y)),
                nearest: self.nearest,
                progress,
                terms,
            },
        })
    }
}
