//! Dense tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is an n-dimensional row-major array of [`Scalar`] values with
//! an optional gradient slot and an optional lineage record (the op that
//! produced it and its inputs). Calling [`Tensor::backward`] on a scalar
//! walks the lineage in reverse topological order and accumulates total
//! derivatives into every reachable tensor that wants one.
//!
//! One forward/backward pass owns its lineage graph exclusively; tensors
//! without lineage are plain immutable values.

mod conv;
mod gradcheck;
pub(crate) mod kernels;
mod norm;
mod ops;

pub use gradcheck::{finite_diff_check, FdOptions};
pub use norm::{BatchNormState, LayerNormState};
pub use ops::{bce_loss, BCE_EPS};

use std::cell::{Cell, Ref, RefCell, RefMut};
use std::collections::HashSet;
use std::rc::Rc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
}

fn fresh_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

/// Backward rule of one op: reads the output's gradient (and data where
/// needed) and accumulates into the inputs it was built over.
type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &[Tensor<T>])>;

struct Lineage<T: Scalar> {
    inputs: Vec<Tensor<T>>,
    backward: BackwardFn<T>,
}

struct Inner<T: Scalar> {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<T>>,
    grad: RefCell<Option<Vec<T>>>,
    requires_grad: bool,
    lineage: Option<Lineage<T>>,
}

/// Dense n-dimensional array with autograd lineage. Cloning is cheap (shared
/// reference); the underlying buffer is shared.
pub struct Tensor<T: Scalar> {
    inner: Rc<Inner<T>>,
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
        write!(
            f,
            "Tensor(shape={:?}, requires_grad={}, lineage={})",
            self.inner.shape,
            self.inner.requires_grad,
            self.inner.lineage.is_some()
        )
    }
}

pub(crate) fn check_shape_len<T: Scalar>(shape: &[usize], data: &[T]) -> Result<()> {
    let numel: usize = shape.iter().product();
    if shape.contains(&0) {
        return Err(Error::dim(format!("zero-sized axis in shape {shape:?}")));
    }
    if numel != data.len() {
        return Err(Error::dim(format!(
            "shape {shape:?} wants {numel} elements, got {}",
            data.len()
        )));
    }
    Ok(())
}

impl<T: Scalar> Tensor<T> {
    fn build(
        shape: Vec<usize>,
        data: Vec<T>,
        requires_grad: bool,
        lineage: Option<Lineage<T>>,
    ) -> Self {
        Tensor {
            inner: Rc::new(Inner {
                id: fresh_id(),
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad,
                lineage,
            }),
        }
    }

    /// Leaf tensor that does not take part in differentiation.
    pub fn constant(shape: &[usize], data: Vec<T>) -> Result<Self> {
        check_shape_len(shape, &data)?;
        Ok(Self::build(shape.to_vec(), data, false, None))
    }

    /// Leaf tensor that accumulates a gradient during backward.
    pub fn parameter(shape: &[usize], data: Vec<T>) -> Result<Self> {
        check_shape_len(shape, &data)?;
        Ok(Self::build(shape.to_vec(), data, true, None))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self::build(shape.to_vec(), vec![T::zero(); numel], false, None)
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let numel = shape.iter().product();
        Self::build(shape.to_vec(), vec![value; numel], false, None)
    }

    pub fn scalar(value: T) -> Self {
        Self::build(vec![1], vec![value], false, None)
    }

    /// Uniform values in `[lo, hi)`, drawn in f64 so the stream of variates
    /// is identical across numeric modes for a given rng state.
    pub fn rand_uniform<R: Rng>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Self {
        let numel = shape.iter().product();
        let data: Vec<T> = (0..numel)
            .map(|_| T::from_f64(rng.gen_range(lo..hi)))
            .collect();
        Self::build(shape.to_vec(), data, false, None)
    }

    /// Interior constructor for op results. The output participates in the
    /// graph only when at least one input needs a gradient; otherwise it is
    /// a plain constant and the graph stays small.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<T>,
        inputs: Vec<Tensor<T>>,
        backward: BackwardFn<T>,
    ) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        if inputs.iter().any(|t| t.needs_grad()) {
            Self::build(shape, data, false, Some(Lineage { inputs, backward }))
        } else {
            Self::build(shape, data, false, None)
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.shape.iter().product()
    }

    pub fn rank(&self) -> usize {
        self.inner.shape.len()
    }

    /// Stable identity of this tensor within the process.
    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub(crate) fn needs_grad(&self) -> bool {
        self.inner.requires_grad || self.inner.lineage.is_some()
    }

    pub fn data(&self) -> Ref<'_, Vec<T>> {
        self.inner.data.borrow()
    }

    /// Mutable access to the raw buffer. Intended for leaf tensors between
    /// passes (optimizer updates, finite-difference probes); mutating a
    /// tensor inside a live graph invalidates that graph's saved state.
    pub fn data_mut(&self) -> RefMut<'_, Vec<T>> {
        self.inner.data.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.inner.data.borrow().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.numel() != 1 {
            return Err(Error::arg(format!(
                "item() needs a single-element tensor, shape is {:?}",
                self.shape()
            )));
        }
        Ok(self.inner.data.borrow()[0])
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// Add `delta` into the gradient slot, creating it on first use.
    pub(crate) fn accumulate_grad(&self, delta: &[T]) {
        if !self.needs_grad() {
            return;
        }
        debug_assert_eq!(delta.len(), self.numel());
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => {
                for (gi, &di) in g.iter_mut().zip(delta) {
                    *gi += di;
                }
            }
            None => *slot = Some(delta.to_vec()),
        }
    }

    /// Reverse-mode differentiation from a scalar. Every tensor reachable
    /// through lineage that wants a gradient receives its total derivative;
    /// repeated calls without `zero_grad` accumulate.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::arg(format!(
                "backward() needs a scalar loss, shape is {:?}",
                self.shape()
            )));
        }
        if self.inner.lineage.is_none() && !self.inner.requires_grad {
            return Err(Error::arg(
                "backward() on a constant with no lineage",
            ));
        }
        self.accumulate_grad(&[T::one()]);
        let order = topo_order(self);
        for node in order.iter().rev() {
            if let Some(lineage) = &node.inner.lineage {
                // No gradient reached this node: nothing to propagate.
                if node.inner.grad.borrow().is_none() {
                    continue;
                }
                (lineage.backward)(node, &lineage.inputs);
            }
        }
        // Interior gradients are per-pass scratch; only leaf gradients
        // persist (and accumulate across repeated calls).
        for node in &order {
            if node.inner.lineage.is_some() {
                node.zero_grad();
            }
        }
        Ok(())
    }
}

/// Iterative postorder over the lineage DAG (children before parents).
fn topo_order<T: Scalar>(root: &Tensor<T>) -> Vec<Tensor<T>> {
    let mut order = Vec::new();
    let mut visited: HashSet<u64> = HashSet::new();
    let mut stack: Vec<(Tensor<T>, usize)> = vec![(root.clone(), 0)];
    visited.insert(root.id());
    while let Some((node, child_idx)) = stack.pop() {
        let n_children = node
            .inner
            .lineage
            .as_ref()
            .map(|l| l.inputs.len())
            .unwrap_or(0);
        if child_idx < n_children {
            stack.push((node.clone(), child_idx + 1));
            let child = node.inner.lineage.as_ref().unwrap().inputs[child_idx].clone();
            if child.inner.lineage.is_some() && visited.insert(child.id()) {
                stack.push((child, 0));
            }
        } else {
            order.push(node);
        }
    }
    order
}
