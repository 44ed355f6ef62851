//! Actor-critic networks: the graph-attention meta policy and the
//! convolutional interaction, reach and base policies.

mod conv;
mod meta;
mod repo;

pub use conv::{ConvPolicy, CONV_FEATURES};
pub use meta::{MetaPolicy, GAT_HEADS, GAT_WIDTH};
pub use repo::{NetKind, PolicyRepository, Variant};

use rand::Rng;

use crate::numeric::{NumericError, ParamSet, Tensor};

/// Hidden width of every actor and critic head.
pub const HEAD_HIDDEN: usize = 64;

/// Initial scale of the actor's output layer relative to the fan-in bound,
/// so fresh policies start close to uniform.
pub const ACTOR_OUT_SCALE: f64 = 0.01;

/// Adds `name.weight` drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)), scaled by
/// `gain`, and a zero `name.bias`. Returns the two slots.
fn dense<R: Rng + ?Sized>(
    ps: &mut ParamSet,
    name: &str,
    shape: &[usize],
    fan_in: usize,
    bias_len: usize,
    gain: f64,
    rng: &mut R,
) -> Result<(usize, usize), NumericError> {
    let bound = gain / (fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
    let w = ps.insert(&format!("{name}.weight"), Tensor::new(shape, data)?)?;
    let b = ps.insert_zeros(&format!("{name}.bias"), &[bias_len])?;
    Ok((w, b))
}

/// Slots of a two-layer head: hidden layer with ELU, then output layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Head {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

impl Head {
    fn new<R: Rng + ?Sized>(ps: &mut ParamSet, name: &str, input: usize, output: usize, out_gain: f64, rng: &mut R) -> Result<Self, NumericError> {
        let (w1, b1) = dense(ps, &format!("{name}.hidden"), &[input, HEAD_HIDDEN], input, HEAD_HIDDEN, 1.0, rng)?;
        let (w2, b2) = dense(ps, &format!("{name}.out"), &[HEAD_HIDDEN, output], HEAD_HIDDEN, output, out_gain, rng)?;
        Ok(Self { w1, b1, w2, b2 })
    }

    fn forward(&self, tape: &mut crate::numeric::Tape, bound: &crate::numeric::Bound, x: crate::numeric::Var) -> Result<crate::numeric::Var, NumericError> {
        let h = tape.linear(x, bound.var(self.w1), bound.var(self.b1))?;
        let h = tape.elu(h);
        tape.linear(h, bound.var(self.w2), bound.var(self.b2))
    }
}

/// Shared slot lookup used when rebuilding a net around loaded parameters.
fn slot(ps: &ParamSet, name: &str) -> Result<usize, NumericError> {
    ps.slot(name).ok_or_else(|| NumericError::UnknownParam(name.to_string()))
}

impl Head {
    fn find(ps: &ParamSet, name: &str) -> Result<Self, NumericError> {
        Ok(Self {
            w1: slot(ps, &format!("{name}.hidden.weight"))?,
            b1: slot(ps, &format!("{name}.hidden.bias"))?,
            w2: slot(ps, &format!("{name}.out.weight"))?,
            b2: slot(ps, &format!("{name}.out.bias"))?,
        })
    }
}

/// Batched network outputs: row-major `[rows, actions]` logits and one value per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Outputs {
    pub logits: Vec<f64>,
    pub values: Vec<f64>,
    pub actions: usize,
}

impl Outputs {
    pub fn rows(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.logits[r * self.actions..(r + 1) * self.actions]
    }

    pub fn probs(&self, r: usize) -> Vec<f64> {
        let mut p = self.row(r).to_vec();
        crate::numeric::softmax_in_place(&mut p);
        p
    }
}
