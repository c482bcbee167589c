//! Dense float64 tensors with reverse-mode automatic differentiation.
//!
//! Graphs are rebuilt per batch: callers create a [`Graph`], push leaves and
//! ops onto it, call [`Graph::backward`] on a scalar loss, and read gradients
//! back off the leaves. A [`Tensor`] with no graph attached is plain data and
//! freely shareable.

mod gradcheck;
mod graph;
mod optim;
#[cfg(test)]
mod tests;

pub use gradcheck::grad_check;
pub use graph::{Graph, NodeId};
pub(crate) use graph::{log_softmax_row, matmul_into};
pub use optim::{Adam, AdamConfig};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch ({lhs:?} vs {rhs:?})")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: invalid shape {shape:?}: {reason}")]
    InvalidShape {
        op: &'static str,
        shape: Vec<usize>,
        reason: String,
    },
    #[error("{op}: non-finite value in input")]
    NonFinite { op: &'static str },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("{op}: index {index} out of range for {bound}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        bound: usize,
    },
}

pub type TensorResult<T> = Result<T, TensorError>;

/// Dense row-major float64 array. Data is shared copy-on-write: cloning a
/// tensor (graph leaves, snapshots) is an Arc bump, and a lone owner
/// mutates in place. Gradients live on graph nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: std::sync::Arc<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> TensorResult<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TensorError::InvalidShape {
                op: "Tensor::new",
                shape,
                reason: format!("shape wants {} values, got {}", numel, data.len()),
            });
        }
        Ok(Self {
            shape,
            data: std::sync::Arc::new(data),
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: std::sync::Arc::new(vec![0.0; numel]),
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![],
            data: std::sync::Arc::new(vec![v]),
        }
    }

    pub fn vector(v: &[f64]) -> Self {
        Self {
            shape: vec![v.len()],
            data: std::sync::Arc::new(v.to_vec()),
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> TensorResult<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        std::sync::Arc::<Vec<f64>>::make_mut(&mut self.data)
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1 && self.shape.is_empty()
    }

    /// Scalar value; panics if the tensor is not scalar-shaped.
    pub fn item(&self) -> f64 {
        assert!(
            self.data.len() == 1,
            "item() on tensor of shape {:?}",
            self.shape
        );
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Rows/cols of a rank-2 tensor; rank-1 is treated as a single row.
    pub(crate) fn dims2(&self, op: &'static str) -> TensorResult<(usize, usize)> {
        match self.shape.len() {
            1 => Ok((1, self.shape[0])),
            2 => Ok((self.shape[0], self.shape[1])),
            _ => Err(TensorError::InvalidShape {
                op,
                shape: self.shape.clone(),
                reason: "expected rank 1 or 2".into(),
            }),
        }
    }
}
