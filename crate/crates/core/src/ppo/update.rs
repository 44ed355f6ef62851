use rand::seq::SliceRandom;
use rand::Rng;

use crate::env::VIEW;
use crate::nets::{ConvPolicy, MetaPolicy};
use crate::numeric::{clip_grad_norm, AdamConfig, Bound, GraphBatch, NumericError, ParamSet, Tape, Tensor, Var};

use super::loss::{masked_logits, ppo_loss};
use super::{discounted_returns, normalize, one_step_advantage, PpoConfig, PpoError, Record};

/// A network PPO can train: batched forward from stored states to
/// `[rows, actions]` logits and `[rows]` values.
pub trait PolicyModel {
    type State;

    fn params(&self) -> &ParamSet;
    fn params_mut(&mut self) -> &mut ParamSet;
    fn forward_states(&self, tape: &mut Tape, bound: &Bound, states: &[&Self::State]) -> Result<(Var, Var), NumericError>;
}

impl PolicyModel for ConvPolicy {
    /// Flattened `[C, 7, 7]` observation.
    type State = Vec<f64>;

    fn params(&self) -> &ParamSet {
        ConvPolicy::params(self)
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        ConvPolicy::params_mut(self)
    }

    fn forward_states(&self, tape: &mut Tape, bound: &Bound, states: &[&Vec<f64>]) -> Result<(Var, Var), NumericError> {
        let data: Vec<f64> = states.iter().flat_map(|s| s.iter().copied()).collect();
        let x = tape.leaf(&Tensor::new(&[states.len(), self.in_channels(), VIEW, VIEW], data)?);
        self.forward(tape, bound, x)
    }
}

impl PolicyModel for MetaPolicy {
    type State = GraphBatch;

    fn params(&self) -> &ParamSet {
        MetaPolicy::params(self)
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        MetaPolicy::params_mut(self)
    }

    fn forward_states(&self, tape: &mut Tape, bound: &Bound, states: &[&GraphBatch]) -> Result<(Var, Var), NumericError> {
        let batch = GraphBatch::concat(states)?;
        self.forward(tape, bound, &batch)
    }
}

/// Averages over the minibatches of one update.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateReport {
    pub records: usize,
    pub minibatches: usize,
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub entropy: f64,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
}

/// Runs `epochs` passes of shuffled-minibatch PPO over `records`. On any
/// numeric failure the parameters (and optimizer state) are restored to
/// their pre-update values.
pub fn ppo_update<M: PolicyModel, R: Rng + ?Sized>(
    model: &mut M,
    records: &[Record<M::State>],
    cfg: &PpoConfig,
    rng: &mut R,
) -> Result<UpdateReport, PpoError> {
    cfg.validate()?;
    if records.is_empty() {
        return Err(PpoError::Empty);
    }
    for (index, r) in records.iter().enumerate() {
        if !(r.log_prob <= 0.0) || !r.value.is_finite() || !r.reward.is_finite() {
            return Err(PpoError::BadRecord {
                index,
                reason: "log-prob must be <= 0 and value/reward finite".into(),
            });
        }
    }
    let mut adv = one_step_advantage(records, cfg.gamma)?;
    if cfg.normalize_advantages {
        normalize(&mut adv);
    }
    let returns = discounted_returns(records, cfg.gamma);
    let snapshot = model.params().clone();
    match run_epochs(model, records, &adv, &returns, cfg, rng) {
        Ok(r) => Ok(r),
        Err(e) => {
            *model.params_mut() = snapshot;
            Err(e)
        }
    }
}

fn run_epochs<M: PolicyModel, R: Rng + ?Sized>(
    model: &mut M,
    records: &[Record<M::State>],
    adv: &[f64],
    returns: &[f64],
    cfg: &PpoConfig,
    rng: &mut R,
) -> Result<UpdateReport, PpoError> {
    let adam = AdamConfig::with_lr(cfg.lr);
    let mut order: Vec<usize> = (0..records.len()).collect();
    let mut report = UpdateReport {
        records: records.len(),
        ..Default::default()
    };
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.minibatch) {
            let states: Vec<&M::State> = chunk.iter().map(|&i| &records[i].state).collect();
            let actions: Vec<usize> = chunk.iter().map(|&i| records[i].action).collect();
            let old: Vec<f64> = chunk.iter().map(|&i| records[i].log_prob).collect();
            let a: Vec<f64> = chunk.iter().map(|&i| adv[i]).collect();
            let ret: Vec<f64> = chunk.iter().map(|&i| returns[i]).collect();

            let mut tape = Tape::new();
            let bound = model.params().bind(&mut tape);
            let (mut logits, values) = model.forward_states(&mut tape, &bound, &states)?;
            if records[chunk[0]].mask.is_some() {
                let width = *tape.shape(logits).last().unwrap_or(&0);
                let mut flat = Vec::with_capacity(chunk.len() * width);
                for &i in chunk {
                    match &records[i].mask {
                        Some(m) if m.len() == width => flat.extend_from_slice(m),
                        _ => {
                            return Err(PpoError::BadRecord {
                                index: i,
                                reason: "mask missing or of the wrong width".into(),
                            })
                        }
                    }
                }
                logits = masked_logits(&mut tape, logits, &flat)?;
            }
            let loss = ppo_loss(&mut tape, logits, values, &actions, &old, &a, &ret, cfg)?;
            let (al, cl, h) = (tape.scalar(loss.actor), tape.scalar(loss.critic), tape.scalar(loss.entropy));
            let grads = tape.backward(loss.total)?;
            let mut g = model.params().collect_grads(&bound, &grads);
            let norm = clip_grad_norm(&mut g, cfg.max_grad_norm);
            if !norm.is_finite() {
                return Err(NumericError::NonFinite("gradient norm").into());
            }
            model.params_mut().adam_step(&g, &adam)?;
            report.minibatches += 1;
            report.actor_loss += al;
            report.critic_loss += cl;
            report.entropy += h;
            report.grad_norm += norm;
        }
    }
    let m = report.minibatches.max(1) as f64;
    report.actor_loss /= m;
    report.critic_loss /= m;
    report.entropy /= m;
    report.grad_norm /= m;
    Ok(report)
}
