//! Clipped-surrogate loss, its exact gradient, and the epoch/minibatch update.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;

use super::adam::{clip_global_norm, Adam};
use super::buffer::RolloutBuffer;
use super::net::DenseNet;
use super::policy::{log_prob, GaussianPolicy};
use super::{PpoConfig, PpoError};
use crate::env::OBS_DIM;

/// Policy plus separate value network, addressed as one flat parameter vector
/// (mean-network parameters, then log-std, then value-network parameters).
#[derive(Debug, Clone, PartialEq)]
pub struct ActorCritic {
    pub policy: GaussianPolicy,
    pub value: DenseNet,
}

impl ActorCritic {
    pub fn num_params(&self) -> usize {
        self.policy.mean.num_params() + self.policy.log_std.len() + self.value.num_params()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.policy.mean.write_flat(&mut out);
        out.extend_from_slice(self.policy.log_std.as_slice());
        self.value.write_flat(&mut out);
        out
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.num_params());
        let mut k = self.policy.mean.read_flat(p);
        let d = self.policy.log_std.len();
        self.policy.log_std.as_mut_slice().copy_from_slice(&p[k..k + d]);
        k += d;
        self.value.read_flat(&p[k..]);
    }

    pub fn value_of(&self, obs: &[f64]) -> f64 {
        self.value.predict_one(obs)[0]
    }

    pub fn is_finite(&self) -> bool {
        self.policy.mean.is_finite() && self.value.is_finite() && self.policy.log_std.iter().all(|v| v.is_finite())
    }
}

/// Flattened training data for one update.
#[derive(Debug, Clone, Default)]
pub struct Batch {
    pub obs: Vec<[f64; OBS_DIM]>,
    pub actions: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    pub action_dim: usize,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.log_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_probs.is_empty()
    }

    /// Concatenates finished buffers.
    pub fn from_buffers(buffers: &[RolloutBuffer]) -> Self {
        let action_dim = buffers.first().map_or(0, |b| b.action_dim());
        let mut out = Batch { action_dim, ..Default::default() };
        for b in buffers {
            assert_eq!(b.advantages.len(), b.len(), "buffer not finished");
            out.obs.extend_from_slice(&b.obs);
            out.actions.extend_from_slice(&b.actions);
            out.log_probs.extend_from_slice(&b.log_probs);
            out.advantages.extend_from_slice(&b.advantages);
            out.returns.extend_from_slice(&b.returns);
        }
        out
    }

    pub fn subset(&self, idx: &[usize]) -> Batch {
        let d = self.action_dim;
        Batch {
            obs: idx.iter().map(|&i| self.obs[i]).collect(),
            actions: idx.iter().flat_map(|&i| self.actions[i * d..(i + 1) * d].iter().copied()).collect(),
            log_probs: idx.iter().map(|&i| self.log_probs[i]).collect(),
            advantages: idx.iter().map(|&i| self.advantages[i]).collect(),
            returns: idx.iter().map(|&i| self.returns[i]).collect(),
            action_dim: d,
        }
    }
}

/// Rescales to zero mean and unit standard deviation; `eps` floors the standard deviation.
pub fn standardize(x: &mut [f64], eps: f64) {
    let n = x.len() as f64;
    if n == 0.0 {
        return;
    }
    let mean = x.iter().sum::<f64>() / n;
    let std = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt().max(eps);
    x.iter_mut().for_each(|v| *v = (*v - mean) / std);
}

/// Loss coefficients used by [`loss_and_grad`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossCoefs {
    pub clip: f64,
    pub entropy: f64,
    pub value: f64,
}

impl From<&PpoConfig> for LossCoefs {
    fn from(c: &PpoConfig) -> Self {
        Self { clip: c.clip_range, entropy: c.ent_coef, value: c.vf_coef }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

/// Clipped-surrogate objective `min(r A, clip(r) A)` for one sample.
pub fn clipped_surrogate(ratio: f64, adv: f64, clip: f64) -> f64 {
    (ratio * adv).min(ratio.clamp(1.0 - clip, 1.0 + clip) * adv)
}

/// Total PPO loss on `batch` and its gradient with respect to [`ActorCritic::params`].
pub fn loss_and_grad(ac: &ActorCritic, batch: &Batch, coefs: LossCoefs) -> (LossParts, Vec<f64>) {
    let n = batch.len();
    let nf = n as f64;
    let d = batch.action_dim;
    let flat: Vec<f64> = batch.obs.iter().flat_map(|o| o.iter().copied()).collect();
    let x = DMatrix::from_column_slice(OBS_DIM, n, &flat);
    let a = DMatrix::from_column_slice(d, n, &batch.actions);
    let log_std = ac.policy.log_std.as_slice();
    let inv_var: Vec<f64> = log_std.iter().map(|ls| (-2.0 * ls).exp()).collect();

    let (mu, p_cache) = ac.policy.mean.forward(&x);
    let mut d_mu = DMatrix::zeros(d, n);
    let mut d_log_std = vec![0.0; d];
    let mut parts = LossParts::default();
    for i in 0..n {
        let lp = log_prob(mu.column(i).as_slice(), log_std, a.column(i).as_slice());
        let log_ratio = lp - batch.log_probs[i];
        let ratio = log_ratio.exp();
        let adv = batch.advantages[i];
        let surr = clipped_surrogate(ratio, adv, coefs.clip);
        parts.policy -= surr / nf;
        parts.approx_kl += (ratio - 1.0 - log_ratio) / nf;
        if (ratio - 1.0).abs() > coefs.clip {
            parts.clip_fraction += 1.0 / nf;
        }
        // The unclipped branch is the one that carries gradient.
        let unclipped = ratio * adv <= ratio.clamp(1.0 - coefs.clip, 1.0 + coefs.clip) * adv;
        if unclipped {
            let d_lp = -ratio * adv / nf;
            for j in 0..d {
                let diff = a[(j, i)] - mu[(j, i)];
                d_mu[(j, i)] = d_lp * diff * inv_var[j];
                d_log_std[j] += d_lp * (diff * diff * inv_var[j] - 1.0);
            }
        }
    }
    parts.entropy = ac.policy.entropy();
    d_log_std.iter_mut().for_each(|g| *g -= coefs.entropy);

    let (v, v_cache) = ac.value.forward(&x);
    let mut d_v = DMatrix::zeros(1, n);
    for i in 0..n {
        let err = v[(0, i)] - batch.returns[i];
        parts.value += err * err / nf;
        d_v[(0, i)] = coefs.value * 2.0 * err / nf;
    }
    parts.total = parts.policy + coefs.value * parts.value - coefs.entropy * parts.entropy;

    let (g_mean, _) = ac.policy.mean.backward(&p_cache, &d_mu);
    let (g_value, _) = ac.value.backward(&v_cache, &d_v);
    let mut grad = Vec::with_capacity(ac.num_params());
    g_mean.write_flat(&mut grad);
    grad.extend_from_slice(&d_log_std);
    g_value.write_flat(&mut grad);
    (parts, grad)
}

/// Per-update training statistics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Diagnostics {
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// Policy-space standard deviation per action dimension after the update.
    pub action_std: Vec<f64>,
    pub epochs: usize,
    pub kl_stopped: bool,
    pub lr: f64,
}

/// Runs up to `config.epochs` passes of shuffled minibatch Adam steps.
/// Advantages in `batch` are standardized here.
pub fn ppo_update(
    ac: &mut ActorCritic,
    opt: &mut Adam,
    batch: &Batch,
    config: &PpoConfig,
    lr: f64,
    rng: &mut impl Rng,
) -> Result<Diagnostics, PpoError> {
    let mut batch = batch.clone();
    standardize(&mut batch.advantages, 1e-8);
    let coefs = LossCoefs::from(config);
    let mut idx: Vec<usize> = (0..batch.len()).collect();
    let mut diag = Diagnostics { lr, ..Default::default() };
    let mut params = ac.params();
    let mut count = 0usize;
    for _ in 0..config.epochs {
        idx.shuffle(rng);
        let mut epoch_kl = 0.0;
        let mut epoch_batches = 0usize;
        for chunk in idx.chunks(config.minibatch) {
            let mb = batch.subset(chunk);
            let (parts, mut grad) = loss_and_grad(ac, &mb, coefs);
            if !parts.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(PpoError::NonFinite(format!(
                    "loss {} (policy {}, value {}) after {} minibatches",
                    parts.total, parts.policy, parts.value, count
                )));
            }
            clip_global_norm(&mut grad, config.max_grad_norm);
            opt.step(&mut params, &grad, lr);
            ac.set_params(&params);
            diag.approx_kl += parts.approx_kl;
            diag.clip_fraction += parts.clip_fraction;
            diag.policy_loss += parts.policy;
            diag.value_loss += parts.value;
            diag.entropy += parts.entropy;
            epoch_kl += parts.approx_kl;
            epoch_batches += 1;
            count += 1;
        }
        diag.epochs += 1;
        if epoch_kl / epoch_batches.max(1) as f64 > config.target_kl {
            diag.kl_stopped = true;
            break;
        }
    }
    let c = count.max(1) as f64;
    diag.approx_kl /= c;
    diag.clip_fraction /= c;
    diag.policy_loss /= c;
    diag.value_loss /= c;
    diag.entropy /= c;
    diag.action_std = ac.policy.std().iter().copied().collect();
    if !ac.is_finite() {
        return Err(PpoError::NonFinite("parameters became non-finite".into()));
    }
    Ok(diag)
}
