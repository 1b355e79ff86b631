//! Dense tensors with a tape-based reverse-mode differentiation engine.
//!
//! Every forward computation in the model is expressed as [`Primitive`]s
//! recorded on a [`Tape`]; [`Tape::gradients`] walks the tape backwards once.
//! Graph structure (edge lists, instance membership) enters as index attributes
//! of gather/scatter primitives, so no sparse matrix type is needed.

mod ops;
mod tape;
mod tensor;

use std::sync::Arc;

use thiserror::Error;

pub use ops::{Attr, Attrs, Primitive, LOG_CLAMP};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Scalar, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("{op}: expected {expected} input(s), got {found}")]
    Arity {
        op: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("unknown primitive `{0}`")]
    UnknownPrimitive(String),
    #[error("primitive `{op}` is missing attribute `{attr}`")]
    MissingAttr { op: String, attr: String },
    #[error("invalid tensor shape {shape:?}")]
    InvalidShape { shape: Vec<usize> },
    #[error("shape {shape:?} needs {expected} elements, got {found}")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        found: usize,
    },
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("tape node {0} is not a trainable leaf")]
    NotAParameter(usize),
}

impl AutodiffError {
    pub(crate) fn shape(op: &'static str, detail: String) -> Self {
        Self::Shape { op, detail }
    }
}

type Result<T> = std::result::Result<T, AutodiffError>;

/// Shorthand constructors for the primitive set.
impl<T: Scalar> Tape<T> {
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::MatMul, &[a, b])
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Add, &[a, b])
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Sub, &[a, b])
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Mul, &[a, b])
    }

    pub fn scale(&self, a: Var, s: f64) -> Result<Var> {
        self.apply(Primitive::Scale(s), &[a])
    }

    pub fn concat(&self, parts: &[Var], axis: usize) -> Result<Var> {
        self.apply(Primitive::Concat { axis }, parts)
    }

    pub fn row_mean(&self, a: Var) -> Result<Var> {
        self.apply(Primitive::RowMean, &[a])
    }

    pub fn row_sum(&self, a: Var) -> Result<Var> {
        self.apply(Primitive::RowSum, &[a])
    }

    pub fn tanh(&self, a: Var) -> Result<Var> {
        self.apply(Primitive::Tanh, &[a])
    }

    pub fn sigmoid(&self, a: Var) -> Result<Var> {
        self.apply(Primitive::Sigmoid, &[a])
    }

    pub fn relu(&self, a: Var) -> Result<Var> {
        self.apply(Primitive::Relu, &[a])
    }

    pub fn leaky_relu(&self, a: Var, slope: f64) -> Result<Var> {
        self.apply(Primitive::LeakyRelu { slope }, &[a])
    }

    pub fn softmax(&self, a: Var, axis: usize) -> Result<Var> {
        self.apply(Primitive::Softmax { axis }, &[a])
    }

    pub fn log(&self, a: Var) -> Result<Var> {
        self.apply(Primitive::Log, &[a])
    }

    pub fn exp(&self, a: Var) -> Result<Var> {
        self.apply(Primitive::Exp, &[a])
    }

    pub fn gather_rows(&self, a: Var, indices: Arc<[usize]>) -> Result<Var> {
        self.apply(Primitive::GatherRows { indices }, &[a])
    }

    pub fn scatter_add_rows(&self, a: Var, indices: Arc<[usize]>, size: usize) -> Result<Var> {
        self.apply(Primitive::ScatterAddRows { indices, size }, &[a])
    }

    pub fn transpose(&self, a: Var) -> Result<Var> {
        self.apply(Primitive::Transpose, &[a])
    }

    pub fn group_softmax(&self, a: Var, groups: Arc<[usize]>, count: usize) -> Result<Var> {
        self.apply(Primitive::GroupSoftmax { groups, count }, &[a])
    }

    /// Sum of every element, as a `[1, 1]` tensor.
    pub fn sum_all(&self, a: Var) -> Result<Var> {
        let rows = self.row_sum(a)?;
        let col = self.transpose(rows)?;
        self.row_sum(col)
    }
}
