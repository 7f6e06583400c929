use std::cell::{Ref, RefCell};
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

use super::ops::Op;

// Ids only need to be unique; graphs on different threads share the counter
// without sharing any node state.
static NEXT_ID: AtomicU64 = AtomicU64::new(1);

pub(crate) fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// Dense f64 tensor participating in a define-by-run reverse-mode graph.
///
/// Cloning a `Tensor` clones the handle, not the storage. A tensor records
/// the operation that produced it whenever any input requires gradients, so
/// calling [`Tensor::backward`] on a scalar result walks the recorded graph
/// and accumulates `d root / d tensor` into every tensor that requires grad.
#[derive(Clone)]
pub struct Tensor(pub(crate) Rc<Inner>);

pub(crate) struct Inner {
    pub(crate) id: u64,
    pub(crate) shape: Vec<usize>,
    // Leaf data is mutated in place by the optimizer between steps; the graph
    // is rebuilt every step so recorded nodes never observe the mutation.
    pub(crate) data: RefCell<Vec<f64>>,
    pub(crate) grad: RefCell<Option<Vec<f64>>>,
    pub(crate) requires_grad: bool,
    pub(crate) op: Option<Op>,
}

pub(crate) fn check_shape(op: &'static str, shape: &[usize], data: &[f64]) -> Result<()> {
    let numel: usize = shape.iter().product();
    if shape.iter().any(|&d| d == 0) {
        return Err(Error::ShapeMismatch {
            op,
            detail: format!("dims must be positive, got {shape:?}"),
        });
    }
    if numel != data.len() {
        return Err(Error::ShapeMismatch {
            op,
            detail: format!(
                "shape {shape:?} implies {numel} elements, got {}",
                data.len()
            ),
        });
    }
    Ok(())
}

impl Tensor {
    pub(crate) fn make(
        shape: Vec<usize>,
        data: Vec<f64>,
        requires_grad: bool,
        op: Option<Op>,
    ) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor(Rc::new(Inner {
            id: fresh_id(),
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad,
            op,
        }))
    }

    /// Constant tensor: never receives gradients, never recorded.
    pub fn constant(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        check_shape("constant", shape, &data)?;
        Ok(Tensor::make(shape.to_vec(), data, false, None))
    }

    /// Leaf tensor that accumulates gradients (a trainable parameter or an
    /// input a gradient is requested for).
    pub fn leaf(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        check_shape("leaf", shape, &data)?;
        Ok(Tensor::make(shape.to_vec(), data, true, None))
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::make(vec![1], vec![v], false, None)
    }

    pub fn scalar_leaf(v: f64) -> Tensor {
        Tensor::make(vec![1], vec![v], true, None)
    }

    pub fn full(shape: &[usize], v: f64) -> Tensor {
        let numel: usize = shape.iter().product();
        Tensor::make(shape.to_vec(), vec![v; numel], false, None)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::full(shape, 0.0)
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn numel(&self) -> usize {
        self.0.shape.iter().product()
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub(crate) fn op(&self) -> Option<&Op> {
        self.0.op.as_ref()
    }

    /// Borrow of the underlying storage.
    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        self.0.data.borrow()
    }

    /// Copy of the underlying storage.
    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.borrow().clone()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert!(self.is_scalar());
        self.0.data.borrow()[0]
    }

    /// Copy of the accumulated gradient, if any backward pass reached this
    /// tensor.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Overwrite leaf data in place (optimizer step). The caller must not
    /// hold live graphs built from the old values.
    pub fn set_data(&self, data: Vec<f64>) -> Result<()> {
        if data.len() != self.numel() {
            return Err(Error::ShapeMismatch {
                op: "set_data",
                detail: format!("expected {} elements, got {}", self.numel(), data.len()),
            });
        }
        *self.0.data.borrow_mut() = data;
        Ok(())
    }

    /// Copy of this tensor's values as a fresh constant, cut off from the
    /// graph.
    pub fn detach(&self) -> Tensor {
        Tensor::make(self.0.shape.clone(), self.to_vec(), false, None)
    }

    pub(crate) fn accumulate_grad(&self, contribution: &[f64]) {
        debug_assert_eq!(contribution.len(), self.numel());
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => {
                for (gi, ci) in g.iter_mut().zip(contribution) {
                    *gi += ci;
                }
            }
            None => *slot = Some(contribution.to_vec()),
        }
    }
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.0.id)
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("data", &self.0.data.borrow())
            .finish()
    }
}
