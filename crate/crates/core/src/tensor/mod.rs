//! Minimal reverse-mode autodiff on dense row-major f64 buffers.
//!
//! A [`Tensor`] is an immutable value in a dynamically built computation
//! graph. Ops record their parents plus a backward rule; calling
//! [`Tensor::backward`] on a scalar walks the graph in reverse topological
//! order and accumulates gradients into every tensor that requires them.
//! Graphs are rebuilt from scratch every training step, which is what lets
//! the run-time refiner train networks constructed on the fly.
//!
//! Parameter tensors are long-lived leaves: optimizers mutate their data in
//! place between steps (never while a graph that reads them is still being
//! evaluated).

mod conv;
mod elementwise;
mod norm;
mod regularize;
mod resample;
mod shape;

pub use conv::{conv2d, conv2d_output_size, conv_transpose2d, conv_transpose2d_output_size};
pub use norm::{batch_norm2d, instance_norm2d, RunningStats};
pub use regularize::{dropout, spectral_normalize, SpectralState};
pub use resample::upsample_bilinear;

use std::cell::{Ref, RefCell};
use std::collections::HashSet;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{CoreError, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// Backward rule attached to a non-leaf tensor. Implementations read cached
/// forward context plus the parents' data and accumulate into parent grads.
pub(crate) trait BackwardOp {
    fn name(&self) -> &'static str;
    fn backward(&self, grad_out: &[f64], parents: &[Tensor]);
}

struct Inner {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    grad: RefCell<Option<Vec<f64>>>,
    requires_grad: bool,
    parents: Vec<Tensor>,
    op: Option<Box<dyn BackwardOp>>,
}

/// Dense n-dimensional f64 array participating in a reverse-mode graph.
///
/// Cloning is cheap (reference-counted handle). Values are immutable while a
/// graph is alive; only leaf data may be rewritten between graphs (optimizer
/// updates, checkpoint loads).
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<Inner>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "Tensor(id={}, shape={:?}, requires_grad={}, op={})",
            self.inner.id,
            self.inner.shape,
            self.inner.requires_grad,
            self.inner.op.as_ref().map_or("leaf", |o| o.name()),
        )
    }
}

impl Tensor {
    fn new(
        shape: Vec<usize>,
        data: Vec<f64>,
        requires_grad: bool,
        parents: Vec<Tensor>,
        op: Option<Box<dyn BackwardOp>>,
    ) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            inner: Rc::new(Inner {
                id: fresh_id(),
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad,
                parents,
                op,
            }),
        }
    }

    /// Leaf tensor from raw row-major data.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(CoreError::shape(
                "from_vec",
                format!("shape {:?} needs {} values, got {}", shape, numel, data.len()),
            ));
        }
        Ok(Self::new(shape.to_vec(), data, false, Vec::new(), None))
    }

    /// Leaf parameter: requires a gradient.
    pub fn param(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(CoreError::shape(
                "param",
                format!("shape {:?} needs {} values, got {}", shape, numel, data.len()),
            ));
        }
        Ok(Self::new(shape.to_vec(), data, true, Vec::new(), None))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel: usize = shape.iter().product();
        Self::new(shape.to_vec(), vec![0.0; numel], false, Vec::new(), None)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel: usize = shape.iter().product();
        Self::new(shape.to_vec(), vec![value; numel], false, Vec::new(), None)
    }

    pub fn scalar(value: f64) -> Self {
        Self::new(vec![1], vec![value], false, Vec::new(), None)
    }

    /// Internal constructor for op outputs. When no parent requires a
    /// gradient the graph edges are dropped, so pure evaluation builds no
    /// backward state at all.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<f64>,
        parents: Vec<Tensor>,
        op: Box<dyn BackwardOp>,
    ) -> Self {
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        if requires_grad {
            Self::new(shape, data, true, parents, Some(op))
        } else {
            Self::new(shape, data, false, Vec::new(), None)
        }
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.shape.iter().product()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// Borrow the raw data (row-major).
    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        self.inner.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.inner.data.borrow().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on non-scalar tensor");
        self.inner.data.borrow()[0]
    }

    pub fn is_finite(&self) -> bool {
        self.inner.data.borrow().iter().all(|v| v.is_finite())
    }

    /// Overwrite leaf data in place (optimizer update, checkpoint load).
    pub fn set_data(&self, values: &[f64]) -> Result<()> {
        if values.len() != self.numel() {
            return Err(CoreError::shape(
                "set_data",
                format!("expected {} values, got {}", self.numel(), values.len()),
            ));
        }
        self.inner.data.borrow_mut().copy_from_slice(values);
        Ok(())
    }

    /// Mutate leaf data through a closure (used by optimizers).
    pub fn update_data(&self, f: impl FnOnce(&mut [f64])) {
        f(&mut self.inner.data.borrow_mut());
    }

    /// Current gradient, if any backward pass has reached this tensor.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    pub(crate) fn accumulate_grad(&self, delta: &[f64]) {
        if !self.inner.requires_grad {
            return;
        }
        debug_assert_eq!(delta.len(), self.numel());
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(buf) => {
                for (b, d) in buf.iter_mut().zip(delta) {
                    *b += d;
                }
            }
            None => *slot = Some(delta.to_vec()),
        }
    }

    /// Cut the graph: same values, no gradient history.
    pub fn detach(&self) -> Tensor {
        Self::new(
            self.inner.shape.clone(),
            self.inner.data.borrow().clone(),
            false,
            Vec::new(),
            None,
        )
    }

    /// Reverse-mode sweep from a scalar. Gradients accumulate across calls
    /// until explicitly zeroed.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(CoreError::NotScalar(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topo_order();
        self.accumulate_grad(&[1.0]);
        for node in order.iter().rev() {
            if let Some(op) = &node.inner.op {
                let grad = node
                    .inner
                    .grad
                    .borrow()
                    .clone()
                    .expect("interior node reached without gradient");
                op.backward(&grad, &node.inner.parents);
            }
        }
        Ok(())
    }

    /// Post-order over the subgraph that requires gradients (parents before
    /// children), iterative to keep deep graphs off the call stack.
    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut visited: HashSet<u64> = HashSet::new();
        let mut stack: Vec<(Tensor, usize)> = Vec::new();
        visited.insert(self.id());
        stack.push((self.clone(), 0));
        while let Some((node, child)) = stack.pop() {
            if child < node.inner.parents.len() {
                let next = node.inner.parents[child].clone();
                stack.push((node, child + 1));
                if next.requires_grad() && visited.insert(next.id()) {
                    stack.push((next, 0));
                }
            } else {
                order.push(node);
            }
        }
        order
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let x = Tensor::param(&[4], vec![1.0, -2.0, 3.0, 0.5]).unwrap();
        let loss = x.sum();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 4]);
    }

    #[test]
    fn backward_of_sum_of_squares() {
        let x = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        let loss = x.sqr().sum();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 4.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let x = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        let y = x.sqr();
        assert!(matches!(y.backward(), Err(CoreError::NotScalar(_))));
    }

    #[test]
    fn gradients_accumulate_until_zeroed() {
        let x = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        x.sum().backward().unwrap();
        x.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 2.0]);
        x.zero_grad();
        assert!(x.grad().is_none());
        x.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn reused_node_gets_both_contributions() {
        // loss = sum(x * x) + sum(x) => grad = 2x + 1
        let x = Tensor::param(&[2], vec![3.0, -1.0]).unwrap();
        let loss = x.mul(&x).unwrap().sum().add(&x.sum()).unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![7.0, -1.0]);
    }

    #[test]
    fn detach_blocks_gradients() {
        let x = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        let d = x.detach();
        assert!(!d.requires_grad());
        let loss = d.sqr().sum();
        // graph was pruned: backward is a no-op and x sees nothing
        loss.backward().unwrap();
        assert!(x.grad().is_none());
    }

    #[test]
    fn eval_graphs_are_pruned() {
        let x = Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        let y = x.sqr();
        assert!(!y.requires_grad());
        assert!(y.inner.parents.is_empty());
    }
}
