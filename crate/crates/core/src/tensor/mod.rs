//! Minimal reverse-mode differentiable tensor.
//!
//! A [`Tensor`] is an immutable, reference-counted node holding row-major
//! `f64` data. Operations on tensors that require gradients record their
//! parents and a backward closure; [`Tensor::backward`] walks the recorded
//! graph in reverse creation order and accumulates gradients into leaves.

mod ops;
mod conv;

use std::collections::HashSet;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

pub use conv::conv_out_len;
pub use ops::{softmax_rows, ElementwiseOp, Operand};

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

/// Errors raised by tensor operations.
#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { len: usize, shape: Vec<usize> },
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Receives the output gradient, the parents and the output data; returns
/// one gradient buffer per parent (`None` when the parent needs none).
pub(crate) type BackwardFn =
    Box<dyn Fn(&[f64], &[Tensor], &[f64]) -> Vec<Option<Vec<f64>>> + Send + Sync>;

struct Node {
    id: u64,
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<f64>>>,
    parents: Vec<Tensor>,
    backward: Option<BackwardFn>,
}

/// Differentiable n-dimensional array of `f64`.
#[derive(Clone)]
pub struct Tensor(Arc<Node>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.0.id)
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn build(
        shape: Vec<usize>,
        data: Vec<f64>,
        requires_grad: bool,
        parents: Vec<Tensor>,
        backward: Option<BackwardFn>,
    ) -> Tensor {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor(Arc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            requires_grad,
            grad: Mutex::new(None),
            parents,
            backward,
        }))
    }

    /// Constant tensor (no gradient tracking).
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != data.len() {
            return Err(TensorError::DataLength {
                len: data.len(),
                shape: shape.to_vec(),
            });
        }
        Ok(Tensor::build(shape.to_vec(), data, false, Vec::new(), None))
    }

    /// Leaf tensor whose gradient is accumulated by [`Tensor::backward`].
    pub fn leaf(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != data.len() {
            return Err(TensorError::DataLength {
                len: data.len(),
                shape: shape.to_vec(),
            });
        }
        Ok(Tensor::build(shape.to_vec(), data, true, Vec::new(), None))
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::build(shape.to_vec(), vec![0.0; numel(shape)], false, Vec::new(), None)
    }

    pub fn full(shape: &[usize], value: f64) -> Tensor {
        Tensor::build(shape.to_vec(), vec![value; numel(shape)], false, Vec::new(), None)
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor::build(vec![1], vec![value], false, Vec::new(), None)
    }

    /// Result of an operation. Parents and backward are dropped when no
    /// parent tracks gradients.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<f64>,
        parents: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Tensor {
        if parents.iter().any(|p| p.requires_grad()) {
            Tensor::build(shape, data, true, parents, Some(backward))
        } else {
            Tensor::build(shape, data, false, Vec::new(), None)
        }
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn ndim(&self) -> usize {
        self.0.shape.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.backward.is_none()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.data[0]
    }

    /// Accumulated gradient; zeros if the leaf was not reached.
    pub fn grad(&self) -> Vec<f64> {
        self.0
            .grad
            .lock()
            .expect("grad lock poisoned")
            .clone()
            .unwrap_or_else(|| vec![0.0; self.numel()])
    }

    pub fn has_grad(&self) -> bool {
        self.0.grad.lock().expect("grad lock poisoned").is_some()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock().expect("grad lock poisoned") = None;
    }

    fn accumulate_grad(&self, g: &[f64]) {
        let mut slot = self.0.grad.lock().expect("grad lock poisoned");
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Same data, detached from the computation record.
    pub fn detach(&self) -> Tensor {
        Tensor::build(self.0.shape.clone(), self.0.data.clone(), false, Vec::new(), None)
    }

    /// Reverse-mode sweep from a scalar loss. Gradients of every reachable
    /// leaf that requires grad are accumulated into that leaf.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::NonScalarLoss(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        // Parents are always created before children, so descending id is
        // a valid reverse topological order.
        let mut order: Vec<Tensor> = Vec::new();
        let mut seen = HashSet::new();
        let mut stack = vec![self.clone()];
        seen.insert(self.id());
        while let Some(t) = stack.pop() {
            for p in &t.0.parents {
                if p.requires_grad() && seen.insert(p.id()) {
                    stack.push(p.clone());
                }
            }
            order.push(t);
        }
        order.sort_by(|a, b| b.id().cmp(&a.id()));

        let mut pending: std::collections::HashMap<u64, Vec<f64>> =
            std::collections::HashMap::new();
        pending.insert(self.id(), vec![1.0]);
        for node in order {
            let Some(g) = pending.remove(&node.id()) else {
                continue;
            };
            match &node.0.backward {
                None => node.accumulate_grad(&g),
                Some(f) => {
                    let grads = f(&g, &node.0.parents, &node.0.data);
                    for (p, pg) in node.0.parents.iter().zip(grads) {
                        let Some(pg) = pg else { continue };
                        if !p.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(pg.len(), p.numel());
                        match pending.get_mut(&p.id()) {
                            Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                            None => {
                                pending.insert(p.id(), pg);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Row-major strides for `shape`.
pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}
