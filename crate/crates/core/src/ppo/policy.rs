use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::net::DenseNet;
use crate::pure_pursuit::{GAIN_MAX, GAIN_MIN, LOOKAHEAD_MAX, LOOKAHEAD_MIN};

const LOG_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Which Pure Pursuit parameters the policy controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActionMode {
    /// Lookahead and gain.
    Joint,
    /// Lookahead only; the gain is pinned.
    LookaheadOnly { gain: f64 },
}

impl ActionMode {
    pub fn dim(&self) -> usize {
        match self {
            ActionMode::Joint => 2,
            ActionMode::LookaheadOnly { .. } => 1,
        }
    }

    pub fn gain_pin(&self) -> Option<f64> {
        match *self {
            ActionMode::Joint => None,
            ActionMode::LookaheadOnly { gain } => Some(gain),
        }
    }

    /// Maps a policy-space action (unit box centred on zero) to physical (lookahead, gain).
    /// Values outside the unit box map outside the physical bounds; the environment clips.
    pub fn to_physical(&self, a: &[f64]) -> [f64; 2] {
        let lookahead = affine(a[0], LOOKAHEAD_MIN, LOOKAHEAD_MAX);
        match *self {
            ActionMode::Joint => [lookahead, affine(a[1], GAIN_MIN, GAIN_MAX)],
            ActionMode::LookaheadOnly { gain } => [lookahead, gain],
        }
    }
}

fn affine(a: f64, lo: f64, hi: f64) -> f64 {
    0.5 * (lo + hi) + 0.5 * (hi - lo) * a
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicy {
    pub mean: DenseNet,
    pub log_std: DVector<f64>,
}

impl GaussianPolicy {
    pub fn new(mean: DenseNet, init_std: f64) -> Self {
        let d = mean.output_dim();
        Self { mean, log_std: DVector::from_element(d, init_std.ln()) }
    }

    pub fn action_dim(&self) -> usize {
        self.log_std.len()
    }

    pub fn std(&self) -> DVector<f64> {
        self.log_std.map(f64::exp)
    }

    pub fn mean_action(&self, obs: &[f64]) -> Vec<f64> {
        self.mean.predict_one(obs)
    }

    pub fn sample(&self, obs: &[f64], rng: &mut impl Rng) -> (Vec<f64>, f64) {
        let mu = self.mean.predict_one(obs);
        let action: Vec<f64> = mu
            .iter()
            .zip(self.log_std.iter())
            .map(|(m, ls)| m + ls.exp() * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let lp = log_prob(&mu, self.log_std.as_slice(), &action);
        (action, lp)
    }

    /// Per-sample log-densities of `actions` (`dim x batch`) under means `mu`.
    pub fn log_probs(&self, mu: &DMatrix<f64>, actions: &DMatrix<f64>) -> Vec<f64> {
        (0..mu.ncols())
            .map(|c| log_prob(mu.column(c).as_slice(), self.log_std.as_slice(), actions.column(c).as_slice()))
            .collect()
    }

    pub fn entropy(&self) -> f64 {
        self.log_std.iter().map(|ls| ls + 0.5 + LOG_SQRT_2PI).sum()
    }
}

/// Diagonal Gaussian log-density.
pub fn log_prob(mu: &[f64], log_std: &[f64], a: &[f64]) -> f64 {
    mu.iter()
        .zip(log_std)
        .zip(a)
        .map(|((m, ls), x)| {
            let z = (x - m) / ls.exp();
            -0.5 * z * z - ls - LOG_SQRT_2PI
        })
        .sum()
}

/// ln(2 pi): the 2-D density at the mode is `-sum(log_std) - LN_2PI`.
pub const LN_2PI: f64 = 1.837_877_066_409_345_5;
