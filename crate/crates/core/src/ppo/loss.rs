use crate::numeric::{NumericError, Tape, Var};

use super::PpoConfig;

/// Added to logits of disallowed actions. Large enough that their
/// probability underflows to exactly zero.
pub const MASK_PENALTY: f64 = -1e9;

/// `−mean(min(ρ·A, clip(ρ, 1−ε, 1+ε)·A))` with `ρ = exp(new − old)`.
pub fn clipped_actor_loss(tape: &mut Tape, new_log_probs: Var, old_log_probs: &[f64], advantages: &[f64], eps: f64) -> Result<Var, NumericError> {
    let n = tape.value(new_log_probs).len();
    if old_log_probs.len() != n || advantages.len() != n {
        return Err(NumericError::ShapeMismatch {
            op: "clipped_actor_loss",
            left: vec![n],
            right: vec![old_log_probs.len(), advantages.len()],
        });
    }
    let neg_old: Vec<f64> = old_log_probs.iter().map(|v| -v).collect();
    let diff = tape.add_const(new_log_probs, &neg_old)?;
    let ratio = tape.exp(diff);
    if tape.value(ratio).iter().any(|r| !r.is_finite()) {
        return Err(NumericError::NonFinite("probability ratio"));
    }
    let surr1 = tape.mul_const(ratio, advantages)?;
    let clipped = tape.clamp(ratio, 1.0 - eps, 1.0 + eps);
    let surr2 = tape.mul_const(clipped, advantages)?;
    let m = tape.minimum(surr1, surr2)?;
    let mean = tape.mean_all(m);
    Ok(tape.neg(mean))
}

/// `mean(½ (V − R)²)`.
pub fn critic_loss(tape: &mut Tape, values: Var, returns: &[f64]) -> Result<Var, NumericError> {
    let neg: Vec<f64> = returns.iter().map(|r| -r).collect();
    let d = tape.add_const(values, &neg)?;
    let sq = tape.square(d);
    let mean = tape.mean_all(sq);
    Ok(tape.scale(mean, 0.5))
}

/// Mean Shannon entropy of the row-wise softmax of `logits`.
pub fn entropy_bonus(tape: &mut Tape, logits: Var) -> Var {
    let logp = tape.log_softmax(logits);
    let p = tape.exp(logp);
    let plogp = tape.mul(p, logp).expect("same shape");
    let rows = tape.sum_last(plogp);
    let mean = tape.mean_all(rows);
    tape.neg(mean)
}

/// Adds [`MASK_PENALTY`] to disallowed logits. `masks` is row-major `[rows, actions]`.
pub fn masked_logits(tape: &mut Tape, logits: Var, masks: &[bool]) -> Result<Var, NumericError> {
    let add: Vec<f64> = masks.iter().map(|&m| if m { 0.0 } else { MASK_PENALTY }).collect();
    tape.add_const(logits, &add)
}

#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub actor: Var,
    pub critic: Var,
    pub entropy: Var,
}

/// `L = L_actor − ζ_h·H + ζ_c·L_critic` for a minibatch.
pub fn ppo_loss(
    tape: &mut Tape,
    logits: Var,
    values: Var,
    actions: &[usize],
    old_log_probs: &[f64],
    advantages: &[f64],
    returns: &[f64],
    cfg: &PpoConfig,
) -> Result<LossVars, NumericError> {
    let logp_all = tape.log_softmax(logits);
    let logp = tape.gather_last(logp_all, actions)?;
    let actor = clipped_actor_loss(tape, logp, old_log_probs, advantages, cfg.clip_eps)?;
    let critic = critic_loss(tape, values, returns)?;
    let entropy = entropy_bonus(tape, logits);
    let h = tape.scale(entropy, -cfg.entropy_coef);
    let c = tape.scale(critic, cfg.value_coef);
    let ah = tape.add(actor, h)?;
    let total = tape.add(ah, c)?;
    Ok(LossVars { total, actor, critic, entropy })
}
