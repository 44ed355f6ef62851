//! One-step advantages, discounted returns, the clipped PPO objective and the
//! minibatch update shared by every policy level.

mod loss;
mod update;

pub use loss::{clipped_actor_loss, critic_loss, entropy_bonus, masked_logits, ppo_loss, LossVars, MASK_PENALTY};
pub use update::{ppo_update, PolicyModel, UpdateReport};

use serde::{Deserialize, Serialize};

use crate::numeric::NumericError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PpoError {
    #[error("trajectory is empty")]
    Empty,
    #[error("invalid PPO configuration: {0}")]
    Config(String),
    #[error("record {index}: {reason}")]
    BadRecord { index: usize, reason: String },
    #[error(transparent)]
    Numeric(#[from] NumericError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PpoConfig {
    pub clip_eps: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub lr: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub gamma: f64,
    pub max_grad_norm: f64,
    pub normalize_advantages: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip_eps: 0.2,
            entropy_coef: 0.01,
            value_coef: 0.5,
            lr: 2.5e-4,
            epochs: 4,
            minibatch: 64,
            gamma: 0.99,
            max_grad_norm: 0.5,
            normalize_advantages: true,
        }
    }
}

impl PpoConfig {
    pub fn meta() -> Self {
        Self {
            lr: 1e-3,
            minibatch: 16,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), PpoError> {
        let bad = |m: &str| Err(PpoError::Config(m.to_string()));
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return bad("clip_eps must lie in (0, 1)");
        }
        if self.entropy_coef < 0.0 || self.value_coef < 0.0 || self.max_grad_norm < 0.0 {
            return bad("coefficients must be non-negative");
        }
        if !(self.lr > 0.0) || self.epochs == 0 || self.minibatch == 0 {
            return bad("lr, epochs and minibatch must be positive");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        Ok(())
    }
}

/// One transition as seen by a policy.
#[derive(Debug, Clone, PartialEq)]
pub struct Record<S> {
    pub state: S,
    pub action: usize,
    pub log_prob: f64,
    pub value: f64,
    pub reward: f64,
    /// Terminal for this policy's task: no bootstrap.
    pub done: bool,
    /// Truncated without terminating: bootstrap from the record's own value.
    pub cut: bool,
    /// Allowed actions, when the policy acts under a mask.
    pub mask: Option<Vec<bool>>,
}

/// `A_t = r_t + γ V_{t+1} (1 − done_t) − V_t`. Consecutive records belong to
/// the same segment unless `done` or `cut` separates them; at a cut `V_{t+1}`
/// is replaced by `V_t`, and the final record is treated as a cut when it is
/// not terminal.
pub fn one_step_advantage<S>(records: &[Record<S>], gamma: f64) -> Result<Vec<f64>, PpoError> {
    if records.is_empty() {
        return Err(PpoError::Empty);
    }
    Ok((0..records.len())
        .map(|t| {
            let r = &records[t];
            let next = if r.done {
                0.0
            } else if r.cut || t + 1 == records.len() {
                r.value
            } else {
                records[t + 1].value
            };
            r.reward + gamma * next - r.value
        })
        .collect())
}

/// `R_t = r_t + γ R_{t+1}` within a segment, zero past a terminal and the
/// recorded value past a cut.
pub fn discounted_returns<S>(records: &[Record<S>], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; records.len()];
    let mut acc = 0.0;
    for t in (0..records.len()).rev() {
        let r = &records[t];
        let tail = if r.done {
            0.0
        } else if r.cut || t + 1 == records.len() {
            r.value
        } else {
            acc
        };
        acc = r.reward + gamma * tail;
        out[t] = acc;
    }
    out
}

/// Rescales to mean 0 and unit standard deviation (population), with the
/// deviation floored at `1e-8`.
pub fn normalize(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    adv.iter_mut().for_each(|a| *a = (*a - mean) / std);
}

/// Plain-number mean Shannon entropy of the given distributions.
pub fn mean_entropy(dists: &[Vec<f64>]) -> f64 {
    if dists.is_empty() {
        return 0.0;
    }
    dists.iter().map(|d| crate::numeric::entropy(d)).sum::<f64>() / dists.len() as f64
}
