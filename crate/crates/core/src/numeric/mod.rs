//! Small differentiable engine: dense tensors, the layers the policy networks
//! need, reverse-mode gradients, Adam and checkpoints.

pub mod checkpoint;
pub mod dist;
pub mod graph;
pub mod params;
pub mod tape;
pub mod tensor;

pub use checkpoint::{Checkpoint, CheckpointError};
pub use dist::{argmax, categorical_sample, entropy};
pub use graph::GraphBatch;
pub use params::{clip_grad_norm, grad_norm, AdamConfig, Bound, ParamSet};
pub use tape::{softmax_in_place, GatVars, Gradients, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NumericError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("invalid shape {0:?}")]
    InvalidShape(Vec<usize>),
    #[error("shape {shape:?} needs {} values, got {len}", shape.iter().product::<usize>())]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("kernel {kernel:?} larger than input {input:?}")]
    KernelTooLarge { input: Vec<usize>, kernel: Vec<usize> },
    #[error("{0}: empty input")]
    Empty(&'static str),
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("probabilities sum to {0}, not 1")]
    NotNormalized(f64),
    #[error("backward already ran on this tape; record a fresh forward pass")]
    BackwardTwice,
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("duplicate parameter name {0}")]
    DuplicateParam(String),
    #[error("unknown parameter {0}")]
    UnknownParam(String),
}
