//! Lap-completion evaluation, speed-multiplier sweeps and controller comparison.

pub mod config;
pub mod controllers;
pub mod laps;
pub mod output;
pub mod sweep;

use std::path::Path;

use thiserror::Error;

pub use config::{RunConfig, TrackSource, TrainMode};
pub use controllers::{
    BuildContext, ControlOutput, ControllerSpec, LapController, MpcController, PpController, RlController,
};
pub use laps::{run_laps, LapRecord, LapReport, LapSettings, LapStats, TraceRow};
pub use sweep::{select_best, sweep, SweepGrid, SweepResult};

use crate::ppo::{ActionMode, Agent, PpoError, TrainEvent, TrainSummary, Trainer};
use crate::raceline::{Raceline, RacelineError};
use crate::vehicle::SimConfig;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("i/o error on {path}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Raceline(#[from] RacelineError),
    #[error(transparent)]
    Ppo(#[from] PpoError),
    #[error("output: {0}")]
    Output(String),
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.display().to_string(), source }
    }
}

impl From<crate::env::EnvError> for HarnessError {
    fn from(e: crate::env::EnvError) -> Self {
        HarnessError::Ppo(e.into())
    }
}

/// Evaluates one controller at one multiplier. `agent` overrides any checkpoint in `spec`.
pub fn evaluate(
    spec: &ControllerSpec,
    agent: Option<&Agent>,
    raceline: &Raceline,
    multiplier: f64,
    sim: &SimConfig,
    settings: &LapSettings,
    ctx: &BuildContext,
) -> Result<(LapReport, Vec<TraceRow>), HarnessError> {
    let scaled = raceline.scale_speeds(multiplier);
    let mut controller = match agent {
        Some(a) => spec.build_with_agent(&scaled, ctx, Some(a.clone()))?,
        None => spec.build(&scaled, ctx)?,
    };
    Ok(run_laps(controller.as_mut(), &scaled, multiplier, sim, settings))
}

/// Sweeps the multiplier grid for one controller.
pub fn sweep_controller(
    spec: &ControllerSpec,
    agent: Option<&Agent>,
    raceline: &Raceline,
    grid: &SweepGrid,
    sim: &SimConfig,
    settings: &LapSettings,
    ctx: &BuildContext,
) -> Result<SweepResult, HarnessError> {
    // Resolve checkpoints once so parallel evaluations share the same agent.
    let loaded = match (agent, spec.checkpoint()) {
        (Some(a), _) => Some(a.clone()),
        (None, Some(path)) => Some(crate::ppo::Checkpoint::load(path)?.to_agent()?),
        (None, None) => None,
    };
    // Fail early on specs that cannot be built.
    spec.build_with_agent(raceline, ctx, loaded.clone())?;
    Ok(sweep(grid, |m| {
        let scaled = raceline.scale_speeds(m);
        let mut c = spec.build_with_agent(&scaled, ctx, loaded.clone()).expect("controller built once already");
        run_laps(c.as_mut(), &scaled, m, sim, settings).0
    }))
}

/// Chooses the ablation gain: among candidates whose adaptive-PP run completes every lap at
/// multiplier 1, the one with the lowest mean lap time.
pub fn select_g0(
    raceline: &Raceline,
    candidates: &[f64],
    sim: &SimConfig,
    settings: &LapSettings,
) -> Result<(f64, Vec<LapReport>), HarnessError> {
    if candidates.is_empty() {
        return Err(HarnessError::Config("no g0 candidates".into()));
    }
    let spec = |g| ControllerSpec::AdaptivePp { v_lo: None, v_hi: None, gain: Some(g) };
    let reports = candidates
        .iter()
        .map(|&g| evaluate(&spec(g), None, raceline, 1.0, sim, settings, &BuildContext::default()).map(|r| r.0))
        .collect::<Result<Vec<_>, _>>()?;
    let best = candidates
        .iter()
        .zip(&reports)
        .max_by(|(_, a), (_, b)| a.completed.cmp(&b.completed).then(b.stats.mean.total_cmp(&a.stats.mean)))
        .map(|(g, _)| *g)
        .expect("candidates is non-empty");
    Ok((best, reports))
}

pub fn action_mode(mode: TrainMode, g0: f64) -> ActionMode {
    match mode {
        TrainMode::Joint => ActionMode::Joint,
        TrainMode::LdOnly => ActionMode::LookaheadOnly { gain: g0 },
    }
}

/// Trains a policy on `raceline`.
pub fn train(
    config: &RunConfig,
    raceline: Raceline,
    g0: f64,
    sink: &mut dyn FnMut(&TrainEvent) -> Result<(), PpoError>,
) -> Result<TrainSummary, HarnessError> {
    let mode = action_mode(config.train.mode, g0);
    let trainer = Trainer::new(config.train.ppo.clone(), raceline, config.train.env, mode, config.seed)?;
    Ok(trainer.run(sink)?)
}
