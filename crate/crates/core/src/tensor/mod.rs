//! A small reverse-mode automatic differentiation engine.
//!
//! Values live on a [`Tape`]; every op appends a node holding its output
//! and enough saved state to run its backward pass. [`Tape::backward`]
//! walks the nodes in reverse and returns [`Gradients`] for every node that
//! depends on a leaf created with `requires_grad`.
//!
//! Activations are `f64`. Trainable parameters are kept as `f32` in a
//! [`ParamStore`] and uploaded to the tape per forward pass, so checkpoints
//! round-trip exactly.

mod attention;
pub mod checkpoint;
mod conv;
pub mod gradcheck;
mod kernels;
mod optim;
mod tape;

pub use checkpoint::{Checkpoint, CheckpointError};
pub use gradcheck::{finite_diff_check, gradcheck_suite, GradCheckReport, GradCheckRow};
pub use optim::{adam_step, clip_global_norm, AdamConfig, AdamState, BoundParams, ParamId, ParamStore};
pub use tape::{Gradients, OpKind, Tape, Var};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("unknown op kind '{0}'")]
    UnknownKind(String),
    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("target id {id} out of range for {classes} classes")]
    TargetOutOfRange { id: usize, classes: usize },
    #[error("wrong number of inputs for {kind}: expected {expected}, got {got}")]
    Arity { kind: &'static str, expected: usize, got: usize },
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// A dense row-major array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(TensorError::Shape(format!("shape {shape:?} needs {n} values, got {}", data.len())));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { shape: vec![1], data: vec![v] }
    }

    pub fn from_f32(shape: Vec<usize>, data: &[f32]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| v as f64).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(TensorError::Shape(format!("cannot reshape {:?} to {shape:?}", self.shape)));
        }
        self.shape = shape;
        Ok(self)
    }
}
