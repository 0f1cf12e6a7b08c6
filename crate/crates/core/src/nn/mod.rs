//! Self-contained tensor/autograd core and the two curb networks: a
//! fully-convolutional encoder-decoder for visible curbs and a multi-scale
//! anchor-parameter head with intra-layer convolutions for occluded curbs,
//! trained with a discrete-continuous loss.

pub mod checkpoint;
pub mod loss;
pub mod occluded;
pub mod real;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod visible;

use thiserror::Error;

pub use loss::{loss_continuous, loss_discrete, loss_total, pixel_bce, smooth_l1, LossConfig};
pub use occluded::OccludedNet;
pub use real::Real;
pub use tape::{Tape, Var};
pub use tensor::Tensor;
pub use train::{SgdState, TrainConfig};
pub use visible::VisibleNet;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("loss became non-finite; step aborted")]
    NonFiniteLoss,
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint malformed: {0}")]
    BadCheckpoint(String),
}

/// Named parameter store; slots index into `tensors`.
#[derive(Debug, Clone)]
pub struct ParamSet<R: Real> {
    pub tensors: Vec<Tensor<R>>,
    pub names: Vec<String>,
}

impl<R: Real> Default for ParamSet<R> {
    fn default() -> Self {
        Self::new()
    }
}

impl<R: Real> ParamSet<R> {
    pub fn new() -> ParamSet<R> {
        ParamSet {
            tensors: Vec::new(),
            names: Vec::new(),
        }
    }

    pub fn add(&mut self, name: &str, t: Tensor<R>) -> usize {
        self.tensors.push(t);
        self.names.push(name.to_string());
        self.tensors.len() - 1
    }

    pub fn cast<T: Real>(&self) -> ParamSet<T> {
        ParamSet {
            tensors: self.tensors.iter().map(|t| t.cast()).collect(),
            names: self.names.clone(),
        }
    }
}
