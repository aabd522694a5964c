//! Dense tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is a shape, a flat row-major value buffer, and (when it
//! requires gradients) an edge to the operation that produced it. Ops are
//! define-by-run: each call computes values eagerly and records the edge;
//! [`Tensor::backward`] runs one reverse topological sweep from a scalar
//! root. Graphs are built per step and dropped afterwards, never reused.
//!
//! Repeated `backward` calls without [`Tensor::zero_grad`] accumulate into
//! existing gradients.

pub mod flops;
mod gradcheck;
mod kernels;
mod ops;

mod backward;

pub use gradcheck::{grad_check, params_grad_check, FD_STEP};
pub use ops::Op;

use std::cell::{Ref, RefCell};
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

pub(crate) struct Inner<T: Scalar> {
    pub(crate) id: u64,
    pub(crate) shape: Vec<usize>,
    pub(crate) values: RefCell<Vec<T>>,
    pub(crate) grad: RefCell<Option<Vec<T>>>,
    pub(crate) requires_grad: bool,
    pub(crate) is_param: bool,
    pub(crate) op: Option<Op<T>>,
}

/// Dense numeric array; node in the autodiff graph. Cheap to clone.
pub struct Tensor<T: Scalar> {
    pub(crate) inner: Rc<Inner<T>>,
}

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<T: Scalar> std::fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

fn check_len<T: Scalar>(values: &[T], shape: &[usize]) -> Result<()> {
    let numel: usize = shape.iter().product();
    if numel != values.len() {
        return Err(Error::Config(format!(
            "shape {:?} implies {} elements, got {}",
            shape,
            numel,
            values.len()
        )));
    }
    Ok(())
}

impl<T: Scalar> Tensor<T> {
    pub(crate) fn make(
        values: Vec<T>,
        shape: Vec<usize>,
        requires_grad: bool,
        is_param: bool,
        op: Option<Op<T>>,
    ) -> Self {
        Tensor {
            inner: Rc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                values: RefCell::new(values),
                grad: RefCell::new(None),
                requires_grad,
                is_param,
                op,
            }),
        }
    }

    /// Constant tensor (no gradient tracking).
    pub fn from_vec(values: Vec<T>, shape: &[usize]) -> Result<Self> {
        check_len(&values, shape)?;
        Ok(Self::make(values, shape.to_vec(), false, false, None))
    }

    /// Trainable leaf: tracked and flagged as a model parameter.
    pub fn parameter(values: Vec<T>, shape: &[usize]) -> Result<Self> {
        check_len(&values, shape)?;
        Ok(Self::make(values, shape.to_vec(), true, true, None))
    }

    /// Tracked leaf that is not a parameter (e.g. a probed input).
    pub fn input(values: Vec<T>, shape: &[usize]) -> Result<Self> {
        check_len(&values, shape)?;
        Ok(Self::make(values, shape.to_vec(), true, false, None))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self::make(vec![T::zero(); numel], shape.to_vec(), false, false, None)
    }

    pub fn scalar(v: T) -> Self {
        Self::make(vec![v], vec![1], false, false, None)
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.shape.iter().product()
    }

    /// Row count of a rank-2 tensor.
    pub fn rows(&self) -> usize {
        debug_assert_eq!(self.inner.shape.len(), 2);
        self.inner.shape[0]
    }

    /// Column count of a rank-2 tensor.
    pub fn cols(&self) -> usize {
        debug_assert_eq!(self.inner.shape.len(), 2);
        self.inner.shape[1]
    }

    pub fn values(&self) -> Ref<'_, Vec<T>> {
        self.inner.values.borrow()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.inner.values.borrow().clone()
    }

    /// Scalar value of a one-element tensor.
    pub fn item(&self) -> T {
        debug_assert_eq!(self.numel(), 1);
        self.inner.values.borrow()[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn is_param(&self) -> bool {
        self.inner.is_param
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// Multiply the stored gradient by `factor` in place (gradient
    /// clipping); a missing gradient stays missing.
    pub fn scale_grad(&self, factor: T) {
        if let Some(g) = self.inner.grad.borrow_mut().as_mut() {
            for x in g.iter_mut() {
                *x *= factor;
            }
        }
    }

    /// Overwrite the value buffer in place (optimizer updates).
    pub fn set_values(&self, values: Vec<T>) -> Result<()> {
        check_len(&values, &self.inner.shape)?;
        *self.inner.values.borrow_mut() = values;
        Ok(())
    }

    pub fn value_at(&self, idx: usize) -> f64 {
        self.inner.values.borrow()[idx].to_f64()
    }

    /// Add `delta` to one element (finite-difference probes).
    pub fn nudge(&self, idx: usize, delta: f64) {
        let mut vals = self.inner.values.borrow_mut();
        let v = vals[idx].to_f64() + delta;
        vals[idx] = T::from_f64(v);
    }

    /// Overwrite one element (exact restore after a probe).
    pub fn set_value_at(&self, idx: usize, v: f64) {
        self.inner.values.borrow_mut()[idx] = T::from_f64(v);
    }

    pub(crate) fn id(&self) -> u64 {
        self.inner.id
    }
}
