use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::controllers::{BuildContext, ControllerSpec};
use super::laps::LapSettings;
use super::sweep::SweepGrid;
use super::HarnessError;
use crate::env::EnvConfig;
use crate::mpc::MpcConfig;
use crate::ppo::{LrSchedule, PpoConfig};
use crate::raceline::{load_raceline, synthesize_track, Raceline, TrackSpec, DEFAULT_HALF_WIDTH};

/// Where a raceline comes from: a CSV file or an analytic shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackSource {
    pub file: Option<PathBuf>,
    pub half_width: Option<f64>,
    pub synth: Option<TrackSpec>,
}

impl TrackSource {
    pub fn synth(spec: TrackSpec) -> Self {
        Self { file: None, half_width: None, synth: Some(spec) }
    }

    /// Relative file paths resolve against `base`.
    pub fn load(&self, base: &Path) -> Result<Raceline, HarnessError> {
        match (&self.file, &self.synth) {
            (Some(f), None) => {
                let path = if f.is_absolute() { f.clone() } else { base.join(f) };
                let text = std::fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
                Ok(load_raceline(&text, self.half_width.unwrap_or(DEFAULT_HALF_WIDTH))?)
            }
            (None, Some(spec)) => {
                let spec = TrackSpec { half_width: self.half_width.unwrap_or(spec.half_width), ..*spec };
                Ok(synthesize_track(&spec)?)
            }
            _ => Err(HarnessError::Config("a track needs exactly one of `file` or `synth`".into())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    #[default]
    Joint,
    LdOnly,
}

impl std::str::FromStr for TrainMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "joint" => Ok(TrainMode::Joint),
            "ld-only" => Ok(TrainMode::LdOnly),
            other => Err(format!("unknown training mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    pub mode: TrainMode,
    pub ppo: PpoConfig,
    pub env: EnvConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self { mode: TrainMode::Joint, ppo: PpoConfig::default(), env: EnvConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub multiplier: f64,
    /// Ablation gain for L_d-only policies and adaptive PP; selected by validation when absent.
    pub g0: Option<f64>,
    pub g0_candidates: Vec<f64>,
    pub laps: LapSettings,
    /// Track for training and g0 validation.
    pub train_track: TrackSource,
    /// Track for eval, sweep and compare.
    pub track: TrackSource,
    pub controller: ControllerSpec,
    pub controllers: Vec<ControllerSpec>,
    pub sweep: SweepGrid,
    pub train: TrainSection,
    pub mpc: MpcConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            multiplier: 1.0,
            g0: None,
            g0_candidates: vec![0.6, 0.7, 0.8, 0.9, 1.0],
            laps: LapSettings::default(),
            train_track: TrackSource::synth(TrackSpec::oval(20.0, 4.0)),
            track: TrackSource::synth(TrackSpec::rounded_rectangle(24.0, 14.0, 3.0)),
            controller: ControllerSpec::TeacherPp,
            controllers: Vec::new(),
            sweep: SweepGrid::default(),
            train: TrainSection::default(),
            mpc: MpcConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configuration serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if !(self.multiplier > 0.0) {
            return bad(format!("multiplier must be positive, got {}", self.multiplier));
        }
        if self.laps.laps == 0 || !(self.laps.max_lap_time > 0.0) {
            return bad("lap count and max_lap_time must be positive".into());
        }
        if let Some(g) = self.g0 {
            if !(crate::pure_pursuit::GAIN_MIN..=crate::pure_pursuit::GAIN_MAX).contains(&g) {
                return bad(format!("g0 = {g} lies outside the gain bounds"));
            }
        }
        if self.g0.is_none() && self.g0_candidates.is_empty() {
            return bad("either g0 or g0_candidates must be given".into());
        }
        self.sweep.validate().map_err(HarnessError::Config)?;
        self.train.ppo.validate()?;
        self.train.env.validate()?;
        self.mpc.validate().map_err(HarnessError::Config)?;
        Ok(())
    }

    pub fn with_schedule(mut self, schedule: LrSchedule) -> Self {
        self.train.ppo.schedule = schedule;
        self
    }

    pub fn build_context(&self, g0: f64) -> BuildContext {
        BuildContext { g0, mpc: self.mpc, stale_timeout: self.train.env.stale_timeout }
    }
}
