//! Running observation and return normalisation.

use serde::{Deserialize, Serialize};

pub const NORM_CLIP: f64 = 10.0;
pub const NORM_EPS: f64 = 1e-8;

/// Per-dimension running mean and population variance, merged batch-wise
/// (Chan et al. parallel update).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningMeanStd {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: f64,
}

impl RunningMeanStd {
    pub fn new(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], var: vec![1.0; dim], count: 0.0 }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `batch` holds rows of length `dim`, concatenated.
    pub fn update(&mut self, batch: &[f64]) {
        let d = self.dim();
        assert_eq!(batch.len() % d, 0, "batch length is not a multiple of the dimension");
        let n = (batch.len() / d) as f64;
        if n == 0.0 {
            return;
        }
        for j in 0..d {
            let col = batch.iter().skip(j).step_by(d);
            let b_mean = col.clone().sum::<f64>() / n;
            let b_var = col.map(|x| (x - b_mean).powi(2)).sum::<f64>() / n;
            if self.count == 0.0 {
                self.mean[j] = b_mean;
                self.var[j] = b_var;
                continue;
            }
            let total = self.count + n;
            let delta = b_mean - self.mean[j];
            let m2 = self.var[j] * self.count + b_var * n + delta * delta * self.count * n / total;
            self.mean[j] += delta * n / total;
            self.var[j] = m2 / total;
        }
        self.count += n;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObsNormalizer {
    pub stats: RunningMeanStd,
    pub clip: f64,
    pub eps: f64,
}

impl ObsNormalizer {
    pub fn new(dim: usize) -> Self {
        Self { stats: RunningMeanStd::new(dim), clip: NORM_CLIP, eps: NORM_EPS }
    }

    pub fn update(&mut self, x: &[f64]) {
        self.stats.update(x);
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.stats.mean.iter().zip(&self.stats.var))
            .map(|(v, (m, var))| ((v - m) / (var + self.eps).sqrt()).clamp(-self.clip, self.clip))
            .collect()
    }
}

/// Scales rewards by the running standard deviation of the discounted return.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnNormalizer {
    pub stats: RunningMeanStd,
    pub gamma: f64,
    pub clip: f64,
    pub eps: f64,
    /// Discounted return accumulator per environment.
    pub returns: Vec<f64>,
}

impl ReturnNormalizer {
    pub fn new(n_envs: usize, gamma: f64) -> Self {
        Self { stats: RunningMeanStd::new(1), gamma, clip: NORM_CLIP, eps: NORM_EPS, returns: vec![0.0; n_envs] }
    }

    pub fn normalize(&mut self, env: usize, reward: f64, done: bool) -> f64 {
        self.returns[env] = self.returns[env] * self.gamma + reward;
        self.stats.update(&[self.returns[env]]);
        let out = (reward / (self.stats.var[0] + self.eps).sqrt()).clamp(-self.clip, self.clip);
        if done {
            self.returns[env] = 0.0;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_stream_normalizes_to_zero() {
        let mut n = ObsNormalizer::new(2);
        for _ in 0..100 {
            n.update(&[3.0, -1.0]);
        }
        assert_eq!(n.normalize(&[3.0, -1.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn extreme_values_are_clipped() {
        let mut n = ObsNormalizer::new(1);
        n.stats = RunningMeanStd { mean: vec![0.0], var: vec![1.0], count: 10.0 };
        assert_eq!(n.normalize(&[50.0]), vec![10.0]);
        assert_eq!(n.normalize(&[-50.0]), vec![-10.0]);
    }

    #[test]
    fn return_normalizer_resets_on_done() {
        let mut r = ReturnNormalizer::new(2, 0.9);
        r.normalize(0, 1.0, false);
        r.normalize(0, 1.0, false);
        assert!((r.returns[0] - 1.9).abs() < 1e-15);
        r.normalize(0, 1.0, true);
        assert_eq!(r.returns[0], 0.0);
        assert_eq!(r.returns[1], 0.0);
    }

    fn batch_stats(rows: &[Vec<f64>], j: usize) -> (f64, f64) {
        let n = rows.len() as f64;
        let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
        (mean, rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n)
    }

    proptest! {
        #[test]
        fn streaming_matches_batch(rows in proptest::collection::vec(proptest::collection::vec(-50.0..50.0f64, 3), 2..300),
                                   chunk in 1usize..17) {
            let mut rms = RunningMeanStd::new(3);
            for c in rows.chunks(chunk) {
                let flat: Vec<f64> = c.iter().flatten().copied().collect();
                rms.update(&flat);
            }
            prop_assert_eq!(rms.count, rows.len() as f64);
            for j in 0..3 {
                let (m, v) = batch_stats(&rows, j);
                prop_assert!((rms.mean[j] - m).abs() < 1e-6);
                prop_assert!((rms.var[j] - v).abs() < 1e-6);
            }
        }
    }
}
