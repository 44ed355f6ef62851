use rand::Rng;

use crate::env::{VIEW, VIEW_CELLS};
use crate::numeric::{Bound, NumericError, ParamSet, Tape, Tensor, Var};

use super::{dense, slot, Head, Outputs, ACTOR_OUT_SCALE};

/// Width of the flattened conv trunk output.
pub const CONV_FEATURES: usize = 64;
const CHANNELS: [usize; 3] = [16, 32, 64];
const KERNEL: usize = 2;

/// Conv trunk (2x2 kernels, max-pool after the first layer, ELU) with actor
/// and critic heads, over `[C, 7, 7]` egocentric observations.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvPolicy {
    in_channels: usize,
    actions: usize,
    params: ParamSet,
    conv: [(usize, usize); 3],
    actor: Head,
    critic: Head,
}

impl ConvPolicy {
    pub fn new<R: Rng + ?Sized>(in_channels: usize, actions: usize, rng: &mut R) -> Result<Self, NumericError> {
        let mut ps = ParamSet::new();
        let mut conv = [(0, 0); 3];
        let mut c_in = in_channels;
        for (i, &c_out) in CHANNELS.iter().enumerate() {
            let fan_in = c_in * KERNEL * KERNEL;
            conv[i] = dense(&mut ps, &format!("conv{}", i + 1), &[c_out, c_in, KERNEL, KERNEL], fan_in, c_out, 1.0, rng)?;
            c_in = c_out;
        }
        let actor = Head::new(&mut ps, "actor", CONV_FEATURES, actions, ACTOR_OUT_SCALE, rng)?;
        let critic = Head::new(&mut ps, "critic", CONV_FEATURES, 1, 1.0, rng)?;
        Ok(Self {
            in_channels,
            actions,
            params: ps,
            conv,
            actor,
            critic,
        })
    }

    /// Rebuilds a policy around an existing parameter set.
    pub fn from_params(params: ParamSet) -> Result<Self, NumericError> {
        let mut conv = [(0, 0); 3];
        for (i, c) in conv.iter_mut().enumerate() {
            *c = (slot(&params, &format!("conv{}.weight", i + 1))?, slot(&params, &format!("conv{}.bias", i + 1))?);
        }
        let actor = Head::find(&params, "actor")?;
        let critic = Head::find(&params, "critic")?;
        let k1 = params.tensor(conv[0].0).shape().to_vec();
        let actions = params.tensor(actor.w2).shape()[1];
        let in_channels = k1[1];
        if params.tensor(conv[2].0).shape()[0] != CONV_FEATURES || params.tensor(critic.w2).shape()[1] != 1 {
            return Err(NumericError::InvalidShape(k1));
        }
        Ok(Self {
            in_channels,
            actions,
            params,
            conv,
            actor,
            critic,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Records the forward pass for `x` of shape `[N, C, 7, 7]`; returns
    /// `[N, actions]` logits and `[N]` values.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<(Var, Var), NumericError> {
        let xs = tape.shape(x).to_vec();
        if xs.len() != 4 || xs[1] != self.in_channels || xs[2] != VIEW || xs[3] != VIEW {
            return Err(NumericError::ShapeMismatch {
                op: "conv policy input",
                left: xs,
                right: vec![self.in_channels, VIEW, VIEW],
            });
        }
        let n = xs[0];
        let mut h = x;
        for (i, &(k, b)) in self.conv.iter().enumerate() {
            h = tape.conv2d(h, bound.var(k), bound.var(b), 1)?;
            h = tape.elu(h);
            if i == 0 {
                h = tape.maxpool2d(h, 2)?;
            }
        }
        let flat = tape.reshape(h, &[n, CONV_FEATURES])?;
        let logits = self.actor.forward(tape, bound, flat)?;
        let v = self.critic.forward(tape, bound, flat)?;
        let values = tape.reshape(v, &[n])?;
        Ok((logits, values))
    }

    /// Gradient-free batched inference over flattened `[C, 7, 7]` observations.
    pub fn infer(&self, observations: &[&[f64]]) -> Result<Outputs, NumericError> {
        let per = self.in_channels * VIEW_CELLS;
        let mut data = Vec::with_capacity(observations.len() * per);
        for o in observations {
            if o.len() != per {
                return Err(NumericError::DataLength {
                    shape: vec![self.in_channels, VIEW, VIEW],
                    len: o.len(),
                });
            }
            data.extend_from_slice(o);
        }
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::new(&[observations.len(), self.in_channels, VIEW, VIEW], data)?);
        let bound = self.params.bind_frozen(&mut tape);
        let (logits, values) = self.forward(&mut tape, &bound, x)?;
        Ok(Outputs {
            logits: tape.value(logits).to_vec(),
            values: tape.value(values).to_vec(),
            actions: self.actions,
        })
    }
}
