use crate::env::OBS_DIM;

/// Generalized advantage estimates for one trajectory segment.
///
/// `terminal[t]` marks that the episode ended after step `t`; `last_value` bootstraps the
/// step after the final entry (ignored when the final entry is terminal).
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    terminal: &[bool],
    last_value: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    assert_eq!(values.len(), n);
    assert_eq!(terminal.len(), n);
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let next_value = if t + 1 < n { values[t + 1] } else { last_value };
        let live = if terminal[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        adv[t] = next_adv;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// On-policy storage for one environment.
#[derive(Debug, Clone)]
pub struct RolloutBuffer {
    capacity: usize,
    action_dim: usize,
    pub obs: Vec<[f64; OBS_DIM]>,
    /// Pre-clip actions, `action_dim` per step.
    pub actions: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub episode_starts: Vec<bool>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBuffer {
    pub fn new(capacity: usize, action_dim: usize) -> Self {
        Self {
            capacity,
            action_dim,
            obs: Vec::with_capacity(capacity),
            actions: Vec::with_capacity(capacity * action_dim),
            log_probs: Vec::with_capacity(capacity),
            rewards: Vec::with_capacity(capacity),
            values: Vec::with_capacity(capacity),
            episode_starts: Vec::with_capacity(capacity),
            advantages: Vec::new(),
            returns: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.len() == self.capacity
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn clear(&mut self) {
        self.obs.clear();
        self.actions.clear();
        self.log_probs.clear();
        self.rewards.clear();
        self.values.clear();
        self.episode_starts.clear();
        self.advantages.clear();
        self.returns.clear();
    }

    #[allow(clippy::too_many_arguments)]
    pub fn push(
        &mut self,
        obs: [f64; OBS_DIM],
        action: &[f64],
        log_prob: f64,
        reward: f64,
        value: f64,
        episode_start: bool,
    ) {
        assert!(!self.is_full(), "rollout buffer overflow");
        assert_eq!(action.len(), self.action_dim);
        self.obs.push(obs);
        self.actions.extend_from_slice(action);
        self.log_probs.push(log_prob);
        self.rewards.push(reward);
        self.values.push(value);
        self.episode_starts.push(episode_start);
    }

    pub fn action(&self, t: usize) -> &[f64] {
        &self.actions[t * self.action_dim..(t + 1) * self.action_dim]
    }

    /// Fills advantages and returns. `last_done` says whether the step after the buffer
    /// starts a new episode.
    pub fn finish(&mut self, last_value: f64, last_done: bool, gamma: f64, lambda: f64) {
        let n = self.len();
        let terminal: Vec<bool> =
            (0..n).map(|t| if t + 1 < n { self.episode_starts[t + 1] } else { last_done }).collect();
        let (adv, ret) = compute_gae(&self.rewards, &self.values, &terminal, last_value, gamma, lambda);
        self.advantages = adv;
        self.returns = ret;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_step_example() {
        let (adv, ret) = compute_gae(&[1.0, 1.0], &[0.5, 0.5], &[false, false], 0.5, 0.99, 0.98);
        assert!((adv[1] - 0.995).abs() < 1e-12);
        assert!((adv[0] - 1.960_349).abs() < 1e-12);
        assert!((ret[0] - (adv[0] + 0.5)).abs() < 1e-15);
    }

    /// Brute-force GAE: explicit weighted sum of one-step residuals up to the episode end.
    #[allow(clippy::needless_range_loop)]
    fn brute_gae(r: &[f64], v: &[f64], term: &[bool], last: f64, g: f64, l: f64) -> Vec<f64> {
        let n = r.len();
        let next_v = |t: usize| if t + 1 < n { v[t + 1] } else { last };
        let delta = |t: usize| r[t] + if term[t] { 0.0 } else { g * next_v(t) } - v[t];
        (0..n)
            .map(|t| {
                let mut sum = 0.0;
                let mut w = 1.0;
                for k in t..n {
                    sum += w * delta(k);
                    if term[k] {
                        break;
                    }
                    w *= g * l;
                }
                sum
            })
            .collect()
    }

    /// Discounted return to the episode end (bootstrapped at the buffer end).
    fn discounted_return(r: &[f64], term: &[bool], last: f64, g: f64, t: usize) -> f64 {
        let mut sum = 0.0;
        let mut w = 1.0;
        for k in t..r.len() {
            sum += w * r[k];
            if term[k] {
                return sum;
            }
            w *= g;
        }
        sum + w * last
    }

    fn random_segment(seed: u64, n: usize) -> (Vec<f64>, Vec<f64>, Vec<bool>, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let v = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let t = (0..n).map(|_| rng.random_bool(0.05)).collect();
        (r, v, t, rng.random_range(-3.0..3.0))
    }

    #[test]
    fn lambda_zero_is_one_step_residual() {
        let (r, v, term, last) = random_segment(1, 50);
        let (adv, _) = compute_gae(&r, &v, &term, last, 0.99, 0.0);
        for t in 0..50 {
            let next = if t + 1 < 50 { v[t + 1] } else { last };
            let live = if term[t] { 0.0 } else { 1.0 };
            assert_eq!(adv[t], r[t] + 0.99 * next * live - v[t]);
        }
    }

    #[test]
    fn lambda_one_telescopes() {
        let (r, v, term, last) = random_segment(2, 200);
        let (adv, _) = compute_gae(&r, &v, &term, last, 0.99, 1.0);
        for t in 0..200 {
            let expect = discounted_return(&r, &term, last, 0.99, t) - v[t];
            assert!((adv[t] - expect).abs() < 1e-12, "t={t}");
        }
    }

    #[test]
    fn buffer_finish_uses_episode_starts() {
        let mut b = RolloutBuffer::new(3, 1);
        b.push([0.0; OBS_DIM], &[0.0], 0.0, 1.0, 0.0, true);
        b.push([0.0; OBS_DIM], &[0.0], 0.0, 1.0, 0.0, false);
        b.push([0.0; OBS_DIM], &[0.0], 0.0, 1.0, 0.0, true);
        b.finish(10.0, false, 0.5, 1.0);
        // Step 1 is terminal because step 2 starts a new episode.
        assert_eq!(b.advantages, vec![1.5, 1.0, 6.0]);
        assert!(b.is_full());
    }

    proptest! {
        #[test]
        fn matches_brute_force(seed in 0u64..10_000, lambda in 0.0..=1.0f64) {
            let (r, v, term, last) = random_segment(seed, 200);
            let (adv, ret) = compute_gae(&r, &v, &term, last, 0.99, lambda);
            let brute = brute_gae(&r, &v, &term, last, 0.99, lambda);
            for t in 0..200 {
                prop_assert!((adv[t] - brute[t]).abs() < 1e-12);
                prop_assert!((ret[t] - adv[t] - v[t]).abs() < 1e-12);
            }
        }
    }
}
