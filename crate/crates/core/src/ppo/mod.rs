//! Proximal Policy Optimization for the Pure Pursuit parameter policy.

pub mod adam;
pub mod buffer;
pub mod net;
pub mod normalize;
pub mod policy;
pub mod schedule;
pub mod train;
pub mod update;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adam::{clip_global_norm, Adam};
pub use buffer::{compute_gae, RolloutBuffer};
pub use net::{DenseNet, NetState};
pub use normalize::{ObsNormalizer, ReturnNormalizer, RunningMeanStd};
pub use policy::{ActionMode, GaussianPolicy};
pub use schedule::LrSchedule;
pub use train::{Agent, Checkpoint, EvalSummary, MetricsRow, TrainEvent, TrainSummary, Trainer};
pub use update::{ppo_update, ActorCritic, Batch, Diagnostics};

#[derive(Debug, Error)]
pub enum PpoError {
    #[error("invalid PPO configuration: {0}")]
    Config(String),
    #[error("non-finite values during training: {0}")]
    NonFinite(String),
    #[error(transparent)]
    Env(#[from] crate::env::EnvError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub n_steps: usize,
    pub n_envs: usize,
    pub minibatch: usize,
    pub epochs: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_range: f64,
    pub target_kl: f64,
    pub ent_coef: f64,
    pub vf_coef: f64,
    pub max_grad_norm: f64,
    pub learning_rate: f64,
    pub schedule: LrSchedule,
    pub total_steps: usize,
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub checkpoint_every: usize,
    pub hidden: Vec<usize>,
    pub init_std: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            n_steps: 4096,
            n_envs: 1,
            minibatch: 256,
            epochs: 5,
            gamma: 0.99,
            gae_lambda: 0.98,
            clip_range: 0.2,
            target_kl: 0.015,
            ent_coef: 0.02,
            vf_coef: 0.6,
            max_grad_norm: 0.7,
            learning_rate: 2.4e-4,
            schedule: LrSchedule::Linear,
            total_steps: 1_200_000,
            eval_every: 5_000,
            eval_episodes: 1,
            checkpoint_every: 25_000,
            hidden: vec![64, 64],
            init_std: 0.5,
        }
    }
}

pub const MAX_TOTAL_STEPS: usize = 1_200_000;

impl PpoConfig {
    pub fn validate(&self) -> Result<(), PpoError> {
        let err = |m: &str| Err(PpoError::Config(m.to_string()));
        if self.n_steps == 0 || self.n_envs == 0 || self.minibatch == 0 || self.epochs == 0 {
            return err("n_steps, n_envs, minibatch and epochs must be positive");
        }
        if !(self.n_steps * self.n_envs).is_multiple_of(self.minibatch) {
            return err("minibatch must divide n_steps * n_envs");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) || !(self.gae_lambda > 0.0 && self.gae_lambda <= 1.0) {
            return err("gamma and gae_lambda must lie in (0, 1]");
        }
        if !(self.clip_range > 0.0) || !(self.target_kl > 0.0) || !(self.max_grad_norm > 0.0) {
            return err("clip_range, target_kl and max_grad_norm must be positive");
        }
        if !(self.ent_coef >= 0.0) || !(self.vf_coef >= 0.0) || !(self.learning_rate > 0.0) {
            return err("coefficients must be non-negative and the learning rate positive");
        }
        if self.total_steps == 0 || self.total_steps > MAX_TOTAL_STEPS {
            return err("total_steps must be in 1..=1200000");
        }
        if self.eval_every == 0 || self.checkpoint_every == 0 || self.eval_episodes == 0 {
            return err("eval_every, eval_episodes and checkpoint_every must be positive");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return err("hidden layer sizes must be positive");
        }
        if !(self.init_std > 0.0) {
            return err("init_std must be positive");
        }
        Ok(())
    }

    /// Number of PPO updates for the configured step budget.
    pub fn num_updates(&self) -> usize {
        self.total_steps.div_ceil(self.n_steps * self.n_envs)
    }
}
