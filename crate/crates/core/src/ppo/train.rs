//! Rollout collection, evaluation cadence, checkpointing.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::buffer::RolloutBuffer;
use super::net::{DenseNet, NetState};
use super::normalize::{ObsNormalizer, ReturnNormalizer};
use super::policy::{ActionMode, GaussianPolicy};
use super::update::{ppo_update, ActorCritic, Batch, Diagnostics};
use super::{PpoConfig, PpoError};
use crate::env::{EnvConfig, RacingEnv, OBS_DIM};
use crate::raceline::Raceline;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Offsets separating the random streams derived from the master seed.
const ENV_SEED_OFFSET: u64 = 1_000;
const ACTION_SEED_OFFSET: u64 = 2_000;
const SHUFFLE_SEED_OFFSET: u64 = 3_000;
/// Evaluation episodes always start from the same spawn draws.
pub const EVAL_SEED_BASE: u64 = 0x5EED_0000;

/// A trained (or untrained) policy with its frozen observation statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub ac: ActorCritic,
    pub mode: ActionMode,
    pub obs_norm: ObsNormalizer,
}

impl Agent {
    pub fn new(config: &PpoConfig, mode: ActionMode, rng: &mut ChaCha8Rng) -> Self {
        let mut sizes = vec![OBS_DIM];
        sizes.extend_from_slice(&config.hidden);
        let mut policy_sizes = sizes.clone();
        policy_sizes.push(mode.dim());
        sizes.push(1);
        let mean = DenseNet::new(&policy_sizes, 0.01, rng);
        let value = DenseNet::new(&sizes, 1.0, rng);
        Self {
            ac: ActorCritic { policy: GaussianPolicy::new(mean, config.init_std), value },
            mode,
            obs_norm: ObsNormalizer::new(OBS_DIM),
        }
    }

    pub fn normalize(&self, obs: &[f64; OBS_DIM]) -> [f64; OBS_DIM] {
        let v = self.obs_norm.normalize(obs);
        std::array::from_fn(|i| v[i])
    }

    /// Deterministic action: the physical (lookahead, gain) for the policy mean.
    pub fn act(&self, obs: &[f64; OBS_DIM]) -> [f64; 2] {
        let a = self.ac.policy.mean_action(&self.normalize(obs));
        self.mode.to_physical(&a)
    }

    pub fn checkpoint(&self, step: usize) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            step,
            mode: self.mode,
            policy: NetState::from(&self.ac.policy.mean),
            log_std: self.ac.policy.log_std.iter().copied().collect(),
            value: NetState::from(&self.ac.value),
            obs_norm: self.obs_norm.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub step: usize,
    pub mode: ActionMode,
    pub policy: NetState,
    pub log_std: Vec<f64>,
    pub value: NetState,
    pub obs_norm: ObsNormalizer,
}

impl Checkpoint {
    pub fn to_agent(&self) -> Result<Agent, PpoError> {
        if self.version != CHECKPOINT_VERSION {
            return Err(PpoError::Checkpoint(format!("unsupported version {}", self.version)));
        }
        let mean = DenseNet::try_from(&self.policy).map_err(PpoError::Checkpoint)?;
        let value = DenseNet::try_from(&self.value).map_err(PpoError::Checkpoint)?;
        if mean.input_dim() != OBS_DIM || value.input_dim() != OBS_DIM || value.output_dim() != 1 {
            return Err(PpoError::Checkpoint("network shapes do not match the observation space".into()));
        }
        if mean.output_dim() != self.mode.dim() || self.log_std.len() != self.mode.dim() {
            return Err(PpoError::Checkpoint("policy output does not match the action mode".into()));
        }
        if self.obs_norm.stats.dim() != OBS_DIM {
            return Err(PpoError::Checkpoint("normalizer dimension mismatch".into()));
        }
        let policy = GaussianPolicy { mean, log_std: nalgebra::DVector::from_vec(self.log_std.clone()) };
        Ok(Agent { ac: ActorCritic { policy, value }, mode: self.mode, obs_norm: self.obs_norm.clone() })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, PpoError> {
        serde_json::from_str(s).map_err(|e| PpoError::Checkpoint(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, PpoError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| PpoError::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

/// Outcome of deterministic evaluation episodes.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EvalSummary {
    pub step: usize,
    pub episodes: usize,
    pub mean_return: f64,
    pub mean_length: f64,
    /// Mean |smoothed lookahead - teacher lookahead| over all evaluation steps.
    pub lookahead_gap: f64,
    pub gain_gap: f64,
    pub laps: usize,
    pub collisions: usize,
}

/// Runs `episodes` deterministic episodes from fixed spawn seeds. The normalizer is only read.
pub fn evaluate_agent(agent: &Agent, env: &mut RacingEnv, episodes: usize) -> Result<EvalSummary, PpoError> {
    let mut out = EvalSummary { episodes, ..Default::default() };
    let mut steps = 0usize;
    for k in 0..episodes {
        let mut obs = env.reset(Some(EVAL_SEED_BASE + k as u64)).to_array();
        loop {
            let r = env.step(agent.act(&obs))?;
            out.mean_return += r.reward;
            out.lookahead_gap += (r.info.applied.lookahead - r.info.teacher.lookahead).abs();
            out.gain_gap += (r.info.applied.gain - r.info.teacher.gain).abs();
            steps += 1;
            obs = r.obs.to_array();
            if r.done.any() {
                out.collisions += r.done.collision as usize;
                out.laps += env.laps_completed();
                break;
            }
        }
    }
    let s = steps.max(1) as f64;
    out.lookahead_gap /= s;
    out.gain_gap /= s;
    out.mean_return /= episodes as f64;
    out.mean_length = steps as f64 / episodes as f64;
    Ok(out)
}

/// One metric-log row per update.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub update: usize,
    pub step: usize,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub std_lookahead: f64,
    pub std_gain: f64,
    pub value_loss: f64,
    pub policy_loss: f64,
    pub entropy: f64,
    pub epochs: usize,
    pub mean_episode_return: f64,
    pub mean_eval_return: f64,
    pub lr: f64,
}

impl MetricsRow {
    fn new(update: usize, step: usize, d: &Diagnostics, episode_return: f64, eval_return: f64) -> Self {
        Self {
            update,
            step,
            approx_kl: d.approx_kl,
            clip_fraction: d.clip_fraction,
            std_lookahead: d.action_std[0],
            std_gain: d.action_std.get(1).copied().unwrap_or(f64::NAN),
            value_loss: d.value_loss,
            policy_loss: d.policy_loss,
            entropy: d.entropy,
            epochs: d.epochs,
            mean_episode_return: episode_return,
            mean_eval_return: eval_return,
            lr: d.lr,
        }
    }
}

/// Progress notifications emitted while training.
#[derive(Debug, Clone)]
pub enum TrainEvent {
    Update(MetricsRow),
    Eval(EvalSummary),
    Checkpoint(Checkpoint),
    Best(Checkpoint),
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub updates: usize,
    pub steps: usize,
    pub metrics: Vec<MetricsRow>,
    pub evals: Vec<EvalSummary>,
    pub best_return: f64,
    pub best: Option<Checkpoint>,
    pub final_agent: Agent,
}

struct Worker {
    env: RacingEnv,
    rng: ChaCha8Rng,
    obs: [f64; OBS_DIM],
    episode_start: bool,
    episode_return: f64,
}

pub struct Trainer {
    pub config: PpoConfig,
    pub agent: Agent,
    workers: Vec<Worker>,
    eval_env: RacingEnv,
    ret_norm: ReturnNormalizer,
    opt: Adam,
    shuffle_rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(
        config: PpoConfig,
        raceline: Raceline,
        env_config: EnvConfig,
        mode: ActionMode,
        seed: u64,
    ) -> Result<Self, PpoError> {
        config.validate()?;
        let env_config = EnvConfig { gain_pin: mode.gain_pin(), ..env_config };
        let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
        let mut agent = Agent::new(&config, mode, &mut init_rng);
        let mut workers = Vec::with_capacity(config.n_envs);
        for i in 0..config.n_envs as u64 {
            let mut env = RacingEnv::new(raceline.clone(), env_config, seed.wrapping_add(ENV_SEED_OFFSET + i))?;
            let obs = env.reset(None).to_array();
            agent.obs_norm.update(&obs);
            workers.push(Worker {
                env,
                rng: ChaCha8Rng::seed_from_u64(seed.wrapping_add(ACTION_SEED_OFFSET + i)),
                obs,
                episode_start: true,
                episode_return: 0.0,
            });
        }
        let eval_env = RacingEnv::new(raceline, env_config, EVAL_SEED_BASE)?;
        let opt = Adam::new(agent.ac.num_params());
        Ok(Self {
            ret_norm: ReturnNormalizer::new(config.n_envs, config.gamma),
            shuffle_rng: ChaCha8Rng::seed_from_u64(seed.wrapping_add(SHUFFLE_SEED_OFFSET)),
            config,
            agent,
            workers,
            eval_env,
            opt,
        })
    }

    pub fn evaluate(&mut self, step: usize) -> Result<EvalSummary, PpoError> {
        let mut s = evaluate_agent(&self.agent, &mut self.eval_env, self.config.eval_episodes)?;
        s.step = step;
        Ok(s)
    }

    /// Trains for the configured budget, reporting progress through `sink`.
    pub fn run(mut self, sink: &mut dyn FnMut(&TrainEvent) -> Result<(), PpoError>) -> Result<TrainSummary, PpoError> {
        let cfg = self.config.clone();
        let n_updates = cfg.num_updates();
        let mut buffers: Vec<RolloutBuffer> =
            (0..cfg.n_envs).map(|_| RolloutBuffer::new(cfg.n_steps, self.agent.mode.dim())).collect();
        let mut step = 0usize;
        let mut metrics = Vec::with_capacity(n_updates);
        let mut evals = Vec::new();
        let mut best_return = f64::NEG_INFINITY;
        let mut best = None;
        let mut last_eval = f64::NAN;

        for update in 0..n_updates {
            let mut finished = Vec::new();
            buffers.iter_mut().for_each(RolloutBuffer::clear);
            for _ in 0..cfg.n_steps {
                for (i, w) in self.workers.iter_mut().enumerate() {
                    let norm_obs = self.agent.normalize(&w.obs);
                    let (action, logp) = self.agent.ac.policy.sample(&norm_obs, &mut w.rng);
                    let value = self.agent.ac.value_of(&norm_obs);
                    let r = w.env.step(self.agent.mode.to_physical(&action))?;
                    w.episode_return += r.reward;
                    let mut next = r.obs.to_array();
                    self.agent.obs_norm.update(&next);
                    let done = r.done.any();
                    let mut reward = self.ret_norm.normalize(i, r.reward, done);
                    if done && !r.done.collision {
                        // Truncated episode: bootstrap from the value of the final state.
                        reward += cfg.gamma * self.agent.ac.value_of(&self.agent.normalize(&next));
                    }
                    buffers[i].push(norm_obs, &action, logp, reward, value, w.episode_start);
                    w.episode_start = done;
                    if done {
                        finished.push(w.episode_return);
                        w.episode_return = 0.0;
                        next = w.env.reset(None).to_array();
                        self.agent.obs_norm.update(&next);
                    }
                    w.obs = next;
                }
                step += cfg.n_envs;
                if step % cfg.eval_every < cfg.n_envs {
                    let s = self.evaluate(step)?;
                    last_eval = s.mean_return;
                    sink(&TrainEvent::Eval(s.clone()))?;
                    if s.mean_return > best_return {
                        best_return = s.mean_return;
                        let ck = self.agent.checkpoint(step);
                        sink(&TrainEvent::Best(ck.clone()))?;
                        best = Some(ck);
                    }
                    evals.push(s);
                }
                if step % cfg.checkpoint_every < cfg.n_envs {
                    sink(&TrainEvent::Checkpoint(self.agent.checkpoint(step)))?;
                }
            }
            for (b, w) in buffers.iter_mut().zip(&self.workers) {
                let last_value = self.agent.ac.value_of(&self.agent.normalize(&w.obs));
                b.finish(last_value, w.episode_start, cfg.gamma, cfg.gae_lambda);
            }
            let batch = Batch::from_buffers(&buffers);
            let remaining = 1.0 - step as f64 / (n_updates * cfg.n_steps * cfg.n_envs) as f64;
            let lr = cfg.schedule.rate(cfg.learning_rate, remaining);
            let diag = ppo_update(&mut self.agent.ac, &mut self.opt, &batch, &cfg, lr, &mut self.shuffle_rng).map_err(
                |e| match e {
                    PpoError::NonFinite(m) => PpoError::NonFinite(format!("update {update} at step {step}: {m}")),
                    other => other,
                },
            )?;
            let ep_return =
                if finished.is_empty() { f64::NAN } else { finished.iter().sum::<f64>() / finished.len() as f64 };
            let row = MetricsRow::new(update, step, &diag, ep_return, last_eval);
            sink(&TrainEvent::Update(row.clone()))?;
            metrics.push(row);
        }
        Ok(TrainSummary { updates: n_updates, steps: step, metrics, evals, best_return, best, final_agent: self.agent })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raceline::{synthesize_track, TrackSpec};

    fn oval() -> Raceline {
        synthesize_track(&TrackSpec::oval(20.0, 6.0)).unwrap()
    }

    fn small_config(total: usize) -> PpoConfig {
        PpoConfig {
            n_steps: 512,
            minibatch: 128,
            total_steps: total,
            eval_every: 512,
            checkpoint_every: 1024,
            hidden: vec![16, 16],
            ..Default::default()
        }
    }

    #[test]
    fn update_count_and_cadence() {
        let cfg = PpoConfig { n_steps: 256, eval_every: 256, checkpoint_every: 512, ..small_config(1024) };
        let t = Trainer::new(cfg, oval(), EnvConfig::default(), ActionMode::Joint, 0).unwrap();
        let (mut evals, mut ckpts, mut updates) = (0, 0, 0);
        let summary = t
            .run(&mut |e| {
                match e {
                    TrainEvent::Eval(_) => evals += 1,
                    TrainEvent::Checkpoint(_) => ckpts += 1,
                    TrainEvent::Update(_) => updates += 1,
                    TrainEvent::Best(_) => {}
                }
                Ok(())
            })
            .unwrap();
        assert_eq!(summary.updates, 4);
        assert_eq!(summary.steps, 1024);
        assert_eq!((evals, ckpts, updates), (4, 2, 4));
        assert!(summary.best.is_some());
    }

    #[test]
    fn same_seed_same_metrics() {
        let run = |seed| {
            Trainer::new(small_config(1024), oval(), EnvConfig::default(), ActionMode::Joint, seed)
                .unwrap()
                .run(&mut |_| Ok(()))
                .unwrap()
                .metrics
        };
        let a = run(3);
        let b = run(3);
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
        assert_ne!(format!("{a:?}"), format!("{:?}", run(4)));
    }

    #[test]
    fn evaluation_leaves_normalizer_untouched() {
        let t = Trainer::new(small_config(512), oval(), EnvConfig::default(), ActionMode::Joint, 1).unwrap();
        let summary = t.run(&mut |_| Ok(())).unwrap();
        let agent = summary.final_agent;
        let before = agent.obs_norm.clone();
        let mut env = RacingEnv::new(oval(), EnvConfig::default(), 0).unwrap();
        evaluate_agent(&agent, &mut env, 2).unwrap();
        assert_eq!(agent.obs_norm, before);
        for (a, b) in agent.obs_norm.stats.mean.iter().zip(&before.stats.mean) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn checkpoint_round_trip_restores_actions() {
        let t = Trainer::new(small_config(512), oval(), EnvConfig::default(), ActionMode::Joint, 2).unwrap();
        let agent = t.run(&mut |_| Ok(())).unwrap().final_agent;
        let restored = Checkpoint::from_json(&agent.checkpoint(512).to_json()).unwrap().to_agent().unwrap();
        assert_eq!(restored, agent);
        let obs = [3.0, 0.1, 0.0, -0.05, 0.02];
        assert_eq!(agent.act(&obs), restored.act(&obs));
    }

    #[test]
    fn checkpoint_rejects_mode_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let agent = Agent::new(&PpoConfig::default(), ActionMode::Joint, &mut rng);
        let mut ck = agent.checkpoint(0);
        ck.mode = ActionMode::LookaheadOnly { gain: 0.8 };
        assert!(ck.to_agent().is_err());
        ck.mode = ActionMode::Joint;
        ck.version = 99;
        assert!(ck.to_agent().is_err());
    }

    #[test]
    fn lookahead_only_pins_gain() {
        let cfg = small_config(512);
        let t = Trainer::new(cfg, oval(), EnvConfig::default(), ActionMode::LookaheadOnly { gain: 0.8 }, 0).unwrap();
        let summary = t.run(&mut |_| Ok(())).unwrap();
        assert_eq!(summary.final_agent.ac.policy.action_dim(), 1);
        assert!(summary.metrics[0].std_gain.is_nan());
        let a = summary.final_agent.act(&[2.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(a[1], 0.8);
    }
}
