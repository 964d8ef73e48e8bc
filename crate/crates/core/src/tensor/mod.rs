//! Dense N-D tensors with tape-based reverse-mode differentiation.
//!
//! A [`Tensor`] is an immutable, reference-counted buffer plus an optional
//! tape node naming the operation that produced it. Only the gradient slot of
//! a leaf is ever mutated, by [`Tensor::backward`].
//!
//! Image tensors use height-width-channel order; batches prepend a batch
//! extent, giving `(n, h, w, c)`.

mod autograd;
mod gradcheck;
mod ops;
mod real;

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use thiserror::Error;

pub use autograd::Backward;
pub(crate) use autograd::NotDifferentiable;
pub use gradcheck::finite_diff_check;
pub(crate) use real::{gemm, MatRef, NARROW_MAX};
pub use real::Real;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("shape {shape:?} holds {expected} values but {actual} were supplied")]
    DataLength { shape: Vec<usize>, expected: usize, actual: usize },
    #[error("shape {0:?} has a zero extent")]
    ZeroExtent(Vec<usize>),
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },
    #[error("{op}: non-finite value in output")]
    NonFinite { op: &'static str },
    #[error("log of non-positive value {0}")]
    LogDomain(f64),
    #[error("backward needs a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("op `{0}` has no backward rule")]
    NoBackwardRule(&'static str),
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub(crate) struct Node<T: Real> {
    pub(crate) op: Box<dyn Backward<T>>,
    pub(crate) inputs: Vec<Tensor<T>>,
}

pub(crate) struct Inner<T: Real> {
    data: Vec<T>,
    shape: Vec<usize>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<T>>>,
    node: Option<Node<T>>,
}

/// N-D array of reals with an autograd record.
pub struct Tensor<T: Real = f64>(Rc<Inner<T>>);

impl<T: Real> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Self(Rc::clone(&self.0))
    }
}

impl<T: Real> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = f.debug_struct("Tensor");
        s.field("shape", &self.0.shape).field("requires_grad", &self.0.requires_grad);
        if let Some(node) = &self.0.node {
            s.field("op", &node.op.name());
        }
        if self.len() <= 16 {
            s.field("data", &self.0.data);
        }
        s.finish()
    }
}

fn check_shape(shape: &[usize], len: usize) -> Result<()> {
    if shape.iter().any(|&e| e == 0) {
        return Err(TensorError::ZeroExtent(shape.to_vec()));
    }
    let expected = numel(shape);
    if expected != len {
        return Err(TensorError::DataLength { shape: shape.to_vec(), expected, actual: len });
    }
    Ok(())
}

impl<T: Real> Tensor<T> {
    /// Constant leaf (no gradient tracking).
    pub fn new(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        Self::leaf(data, shape, false)
    }

    /// Leaf tensor; with `requires_grad` set it collects gradients on backward.
    pub fn leaf(data: Vec<T>, shape: &[usize], requires_grad: bool) -> Result<Self> {
        check_shape(shape, data.len())?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op: "leaf" });
        }
        Ok(Self(Rc::new(Inner {
            data,
            shape: shape.to_vec(),
            requires_grad,
            grad: RefCell::new(None),
            node: None,
        })))
    }

    pub fn scalar(value: T) -> Self {
        Self::new(vec![value], &[]).expect("scalar shape is valid")
    }

    pub fn full(shape: &[usize], value: T) -> Result<Self> {
        Self::new(vec![value; numel(shape)], shape)
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::one())
    }

    /// Result of an operation. Records `op` on the tape when any input
    /// requires a gradient; rejects non-finite outputs.
    pub fn from_op(
        data: Vec<T>,
        shape: &[usize],
        inputs: Vec<Tensor<T>>,
        op: impl Backward<T> + 'static,
    ) -> Result<Self> {
        check_shape(shape, data.len())?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op: op.name() });
        }
        let requires_grad = inputs.iter().any(Tensor::requires_grad);
        let node = requires_grad.then(|| Node { op: Box::new(op), inputs });
        Ok(Self(Rc::new(Inner {
            data,
            shape: shape.to_vec(),
            requires_grad,
            grad: RefCell::new(None),
            node,
        })))
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn data(&self) -> &[T] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.0.data.clone()
    }

    pub fn len(&self) -> usize {
        self.0.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.data.is_empty()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<T> {
        match self.0.data.as_slice() {
            [v] => Ok(*v),
            _ => Err(TensorError::InvalidArgument {
                op: "item",
                msg: format!("tensor of shape {:?} is not a scalar", self.0.shape),
            }),
        }
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.node.is_none()
    }

    /// Name of the producing op, if recorded.
    pub fn op_name(&self) -> Option<&'static str> {
        self.0.node.as_ref().map(|n| n.op.name())
    }

    /// Accumulated gradient of a leaf.
    pub fn grad(&self) -> Option<Tensor<T>> {
        self.0
            .grad
            .borrow()
            .as_ref()
            .map(|g| Tensor::new(g.clone(), &self.0.shape).expect("grad matches shape"))
    }

    pub(crate) fn grad_vec(&self) -> Option<Vec<T>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Same values, cut from the tape.
    pub fn detach(&self) -> Self {
        Self::new(self.0.data.clone(), &self.0.shape).expect("detached copy is valid")
    }

    pub(crate) fn ptr(&self) -> *const Inner<T> {
        Rc::as_ptr(&self.0)
    }

    pub(crate) fn node(&self) -> Option<&Node<T>> {
        self.0.node.as_ref()
    }

    pub(crate) fn accumulate_grad(&self, g: &[T]) {
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a = *a + b),
            None => *slot = Some(g.to_vec()),
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.data.iter().map(|v| v.as_f64()).collect()
    }
}
