use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::env::observe;
use crate::mpc::{MpcConfig, MpcTracker};
use crate::ppo::{Agent, Checkpoint};
use crate::pure_pursuit::{Mode, ParamSource, PpParams, PurePursuit, DEFAULT_STALE_TIMEOUT};
use crate::raceline::Raceline;
use crate::vehicle::{Command, VehicleState};

use super::HarnessError;

/// One control decision plus what the trace log records about it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlOutput {
    pub command: Command,
    /// Pure Pursuit parameters in effect; `None` for controllers without them.
    pub params: Option<PpParams>,
    pub mode: Mode,
    pub kappa_max: f64,
}

pub trait LapController {
    fn name(&self) -> &str;
    fn reset(&mut self);
    fn control(&mut self, state: &VehicleState, raceline: &Raceline, now: f64) -> ControlOutput;
}

/// Pure Pursuit with a built-in parameter source.
pub struct PpController {
    name: String,
    pp: PurePursuit,
}

impl PpController {
    pub fn new(name: impl Into<String>, source: ParamSource) -> Result<Self, HarnessError> {
        let pp = PurePursuit::new(source).map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(Self { name: name.into(), pp })
    }
}

impl LapController for PpController {
    fn name(&self) -> &str {
        &self.name
    }

    fn reset(&mut self) {
        self.pp.reset();
    }

    fn control(&mut self, state: &VehicleState, raceline: &Raceline, now: f64) -> ControlOutput {
        let out = self.pp.step(state, raceline, now);
        ControlOutput { command: out.command, params: Some(out.params), mode: out.mode, kappa_max: out.kappa_max }
    }
}

/// Pure Pursuit fed by a policy every control step, with the teacher as staleness fallback.
pub struct RlController {
    name: String,
    agent: Agent,
    pp: PurePursuit,
    steps: usize,
    /// Stop delivering actions from this control step on (fallback testing).
    pub withhold_from: Option<usize>,
}

impl RlController {
    pub fn new(name: impl Into<String>, agent: Agent, timeout: f64) -> Result<Self, HarnessError> {
        let pp =
            PurePursuit::new(ParamSource::External { timeout }).map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(Self { name: name.into(), agent, pp, steps: 0, withhold_from: None })
    }
}

impl LapController for RlController {
    fn name(&self) -> &str {
        &self.name
    }

    fn reset(&mut self) {
        self.pp.reset();
    }

    fn control(&mut self, state: &VehicleState, raceline: &Raceline, now: f64) -> ControlOutput {
        if self.withhold_from.is_none_or(|k| self.steps < k) {
            let [lookahead, gain] = self.agent.act(&observe(state, raceline).to_array());
            self.pp.receive(PpParams { lookahead, gain }, now);
        }
        self.steps += 1;
        let out = self.pp.step(state, raceline, now);
        ControlOutput { command: out.command, params: Some(out.params), mode: out.mode, kappa_max: out.kappa_max }
    }
}

pub struct MpcController {
    tracker: MpcTracker,
}

impl MpcController {
    pub fn new(config: MpcConfig) -> Result<Self, HarnessError> {
        Ok(Self { tracker: MpcTracker::new(config).map_err(HarnessError::Config)? })
    }
}

impl LapController for MpcController {
    fn name(&self) -> &str {
        "mpc"
    }

    fn reset(&mut self) {
        self.tracker.reset();
    }

    fn control(&mut self, state: &VehicleState, raceline: &Raceline, _now: f64) -> ControlOutput {
        let command = self.tracker.step(raceline, state);
        let nearest = raceline.nearest_index(state.position());
        ControlOutput { command, params: None, mode: Mode::Mpc, kappa_max: raceline.taps(nearest).kappa_max }
    }
}

/// Controller selection as written in run configurations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControllerSpec {
    FixedPp {
        #[serde(default = "default_fixed_lookahead")]
        lookahead: f64,
        #[serde(default = "default_fixed_gain")]
        gain: f64,
    },
    /// Speed-linear lookahead; endpoints default to the raceline's speed range, gain to g0.
    AdaptivePp {
        v_lo: Option<f64>,
        v_hi: Option<f64>,
        gain: Option<f64>,
    },
    TeacherPp,
    RlJoint {
        checkpoint: PathBuf,
    },
    RlLdOnly {
        checkpoint: PathBuf,
    },
    Mpc,
}

fn default_fixed_lookahead() -> f64 {
    1.5
}

fn default_fixed_gain() -> f64 {
    0.9
}

/// Shared settings needed to instantiate controllers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BuildContext {
    pub g0: f64,
    pub mpc: MpcConfig,
    pub stale_timeout: f64,
}

impl Default for BuildContext {
    fn default() -> Self {
        Self { g0: 0.8, mpc: MpcConfig::default(), stale_timeout: DEFAULT_STALE_TIMEOUT }
    }
}

impl ControllerSpec {
    pub fn label(&self) -> &'static str {
        match self {
            ControllerSpec::FixedPp { .. } => "fixed_pp",
            ControllerSpec::AdaptivePp { .. } => "adaptive_pp",
            ControllerSpec::TeacherPp => "teacher_pp",
            ControllerSpec::RlJoint { .. } => "rl_joint",
            ControllerSpec::RlLdOnly { .. } => "rl_ld_only",
            ControllerSpec::Mpc => "mpc",
        }
    }

    pub fn checkpoint(&self) -> Option<&PathBuf> {
        match self {
            ControllerSpec::RlJoint { checkpoint } | ControllerSpec::RlLdOnly { checkpoint } => Some(checkpoint),
            _ => None,
        }
    }

    /// Builds a controller for `raceline` (already speed-scaled). RL specs load their checkpoint.
    pub fn build(
        &self,
        raceline: &Raceline,
        ctx: &BuildContext,
    ) -> Result<Box<dyn LapController + Send>, HarnessError> {
        match self.checkpoint() {
            Some(path) => {
                let agent = Checkpoint::load(path)?.to_agent()?;
                self.build_with_agent(raceline, ctx, Some(agent))
            }
            None => self.build_with_agent(raceline, ctx, None),
        }
    }

    /// Like [`build`](Self::build) but with an in-memory agent for RL specs.
    pub fn build_with_agent(
        &self,
        raceline: &Raceline,
        ctx: &BuildContext,
        agent: Option<Agent>,
    ) -> Result<Box<dyn LapController + Send>, HarnessError> {
        let label = self.label();
        Ok(match *self {
            ControllerSpec::FixedPp { lookahead, gain } => {
                Box::new(PpController::new(label, ParamSource::Fixed { lookahead, gain })?)
            }
            ControllerSpec::AdaptivePp { v_lo, v_hi, gain } => {
                let (lo, hi) = raceline.speed_range();
                // A constant-speed raceline has no range to interpolate over.
                let hi = if hi > lo { hi } else { lo + 1.0 };
                let source = ParamSource::AdaptiveLinear {
                    v_lo: v_lo.unwrap_or(lo),
                    v_hi: v_hi.unwrap_or(hi),
                    gain: gain.unwrap_or(ctx.g0),
                };
                Box::new(PpController::new(label, source)?)
            }
            ControllerSpec::TeacherPp => Box::new(PpController::new(label, ParamSource::Teacher)?),
            ControllerSpec::RlJoint { .. } | ControllerSpec::RlLdOnly { .. } => {
                let agent = agent.ok_or_else(|| HarnessError::Config(format!("{label} needs a trained agent")))?;
                let want = if matches!(self, ControllerSpec::RlJoint { .. }) { 2 } else { 1 };
                if agent.mode.dim() != want {
                    return Err(HarnessError::Config(format!(
                        "{label} expects a {want}-D policy, checkpoint has {}",
                        agent.mode.dim()
                    )));
                }
                Box::new(RlController::new(label, agent, ctx.stale_timeout)?)
            }
            ControllerSpec::Mpc => Box::new(MpcController::new(ctx.mpc)?),
        })
    }
}
