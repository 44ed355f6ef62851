use std::collections::HashMap;

use rand::Rng;

use super::tape::{Gradients, Tape, Var};
use super::tensor::Tensor;
use super::NumericError;

/// Rounds to the nearest value representable as `f32`.
///
/// Parameters are stored at 32-bit precision so checkpoints round-trip
/// bit-exactly; arithmetic runs at 64-bit.
#[inline]
pub fn to_storage(v: f64) -> f64 {
    v as f32 as f64
}

#[derive(Debug, Clone, PartialEq)]
struct Param {
    name: String,
    value: Tensor,
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Named parameter tensors in stable insertion order, with Adam moments.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    params: Vec<Param>,
    index: HashMap<String, usize>,
    steps: u64,
}

/// Parameters placed on a tape, in [`ParamSet`] order.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, slot: usize) -> Var {
        self.vars[slot]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter and returns its slot.
    pub fn insert(&mut self, name: &str, mut value: Tensor) -> Result<usize, NumericError> {
        if self.index.contains_key(name) {
            return Err(NumericError::DuplicateParam(name.to_string()));
        }
        value.data_mut().iter_mut().for_each(|v| *v = to_storage(*v));
        let n = value.len();
        self.params.push(Param {
            name: name.to_string(),
            value,
            m: vec![0.0; n],
            v: vec![0.0; n],
        });
        self.index.insert(name.to_string(), self.params.len() - 1);
        Ok(self.params.len() - 1)
    }

    /// Uniform fan-in initialisation `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn insert_uniform<R: Rng + ?Sized>(&mut self, name: &str, shape: &[usize], fan_in: usize, rng: &mut R) -> Result<usize, NumericError> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        self.insert(name, Tensor::new(shape, data)?)
    }

    pub fn insert_zeros(&mut self, name: &str, shape: &[usize]) -> Result<usize, NumericError> {
        self.insert(name, Tensor::zeros(shape))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn slot(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.slot(name).map(|i| &self.params[i].value)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|p| (p.name.as_str(), &p.value))
    }

    pub fn tensor(&self, slot: usize) -> &Tensor {
        &self.params[slot].value
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Overwrites a parameter's values (shape must match).
    pub fn set(&mut self, name: &str, data: &[f64]) -> Result<(), NumericError> {
        let i = self.slot(name).ok_or_else(|| NumericError::UnknownParam(name.to_string()))?;
        let p = &mut self.params[i];
        if p.value.len() != data.len() {
            return Err(NumericError::ShapeMismatch {
                op: "set param",
                left: p.value.shape().to_vec(),
                right: vec![data.len()],
            });
        }
        p.value.data_mut().iter_mut().zip(data).for_each(|(d, s)| *d = to_storage(*s));
        Ok(())
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound {
            vars: self.params.iter().map(|p| tape.param(&p.value)).collect(),
        }
    }

    /// Binds parameters as constants (no gradient bookkeeping).
    pub fn bind_frozen(&self, tape: &mut Tape) -> Bound {
        Bound {
            vars: self.params.iter().map(|p| tape.leaf(&p.value)).collect(),
        }
    }

    /// Gradient vectors in slot order.
    pub fn collect_grads(&self, bound: &Bound, grads: &Gradients) -> Vec<Vec<f64>> {
        bound.vars.iter().map(|&v| grads.get(v)).collect()
    }

    /// One Adam step with bias correction.
    pub fn adam_step(&mut self, grads: &[Vec<f64>], cfg: &AdamConfig) -> Result<(), NumericError> {
        if grads.len() != self.params.len() {
            return Err(NumericError::ShapeMismatch {
                op: "adam_step",
                left: vec![self.params.len()],
                right: vec![grads.len()],
            });
        }
        for (p, g) in self.params.iter().zip(grads) {
            if p.value.len() != g.len() {
                return Err(NumericError::ShapeMismatch {
                    op: "adam_step",
                    left: p.value.shape().to_vec(),
                    right: vec![g.len()],
                });
            }
        }
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for (p, g) in self.params.iter_mut().zip(grads) {
            let data = p.value.data_mut();
            for j in 0..g.len() {
                p.m[j] = cfg.beta1 * p.m[j] + (1.0 - cfg.beta1) * g[j];
                p.v[j] = cfg.beta2 * p.v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
                let m_hat = p.m[j] / c1;
                let v_hat = p.v[j] / c2;
                data[j] = to_storage(data[j] - cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps));
            }
        }
        Ok(())
    }
}

/// Global L2 norm of a gradient list.
pub fn grad_norm(grads: &[Vec<f64>]) -> f64 {
    grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt()
}

/// Rescales gradients in place so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = grad_norm(grads);
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| *g *= s);
    }
    norm
}
