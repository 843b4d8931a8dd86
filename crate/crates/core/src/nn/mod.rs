//! Differentiable building blocks with hand-written backward passes.
//!
//! Sequence tensors are `(batch, length, channels)` arrays; flat activations
//! are `(batch, features)`. Every parameter is a 2-D [`Param`] holding its
//! value and accumulated gradient.

mod adam;
mod gradcheck;
mod layers;
mod loss;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamState};
pub use gradcheck::{gradient_check, Differentiable, GradCheckConfig, GradCheckReport};
pub use layers::{AvgPool, BatchNorm, Conv1d, Dense, Dropout, Embedding};
pub use loss::{ce_elasticnet, softmax, CrossEntropy, PROB_FLOOR};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub value: Array2<f64>,
    #[serde(skip)]
    pub grad: Array2<f64>,
}

impl Param {
    pub fn new(value: Array2<f64>) -> Self {
        let grad = Array2::zeros(value.raw_dim());
        Self { value, grad }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(Array2::zeros((rows, cols)))
    }

    pub fn zero_grad(&mut self) {
        if self.grad.raw_dim() != self.value.raw_dim() {
            self.grad = Array2::zeros(self.value.raw_dim());
        } else {
            self.grad.fill(0.0);
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}
