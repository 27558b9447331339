//! Dense f64 tensors, a reverse-mode tape, finite-difference checking and
//! first-order optimizers.
//!
//! Everything the model computes is recorded on a [`Tape`] as 2-D row-major
//! values (vectors are `1×n` or `n×1`). Parameters live outside the tape in a
//! [`ParamStore`]; a forward pass copies what it needs onto a fresh tape and
//! [`Gradients::accumulate_into`] routes the results back into the store's
//! gradient slots.

pub mod gradcheck;
pub mod optim;
pub mod params;
pub mod tape;

pub use gradcheck::{check_gradients, check_gradients_with, GradCheckReport};
pub use optim::{adam_step, Adam, AdamState, OptimConfig, Optimizer, RAdam, Sgd};
pub use params::{Checkpoint, ParamGroup, ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("axis {axis} is not valid for shape {shape:?}")]
    BadAxis { axis: usize, shape: Vec<usize> },
    #[error("shape {shape:?} holds {expected} values, got {actual}")]
    BadLength {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("index {index} out of range for {what} of size {size}")]
    OutOfRange {
        what: &'static str,
        index: usize,
        size: usize,
    },
    #[error("{op}: every entry of slice {slice} is masked")]
    FullyMasked { op: &'static str, slice: usize },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("backward already ran on this tape")]
    BackwardTwice,
    #[error("non-finite gradient for parameter `{name}` at position {position}")]
    NonFiniteGradient { name: String, position: usize },
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("duplicate parameter `{0}`")]
    DuplicateParam(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

/// Dense row-major array of `f64` with an optional gradient slot.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) || expected != values.len() {
            return Err(TensorError::BadLength {
                shape,
                expected,
                actual: values.len(),
            });
        }
        Ok(Self {
            shape,
            values,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            values: vec![0.0; n],
            requires_grad: false,
            grad: None,
        }
    }

    /// Entries drawn from `N(0, std²)`.
    pub fn random_normal<R: rand::Rng + ?Sized>(shape: Vec<usize>, std: f64, rng: &mut R) -> Self {
        let n = shape.iter().product();
        let dist = rand_distr::Normal::new(0.0, std).expect("finite standard deviation");
        Self {
            shape,
            values: (0..n).map(|_| rng.sample(dist)).collect(),
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![1, 1],
            values: vec![v],
            requires_grad: false,
            grad: None,
        }
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let values: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::new(vec![rows.len(), cols], values)
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Shape viewed as a matrix: rank-1 tensors are a single row, higher
    /// ranks fold every leading dimension into the row count.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [n] => (1, *n),
            [] => (1, 1),
            s => {
                let cols = *s.last().unwrap();
                (self.values.len() / cols, cols)
            }
        }
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        let (_, cols) = self.dims2();
        self.values[row * cols + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let (_, cols) = self.dims2();
        &self.values[row * cols..(row + 1) * cols]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}
