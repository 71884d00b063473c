//! Dense n-dimensional tensors with reverse-mode differentiation.
//!
//! Tensors are immutable once created; gradients accumulate in a side cell
//! during [`backward`]. Every operation that participates in
//! differentiation records its inputs and a backward rule on the output
//! tensor, forming an implicit tape. Node ids are assigned monotonically at
//! creation, so walking reachable nodes in descending id order is a valid
//! reverse topological order.

mod bn;
mod conv;
mod gemm;
mod ops;

pub use bn::{batch_norm, fold_bn_into_conv, BatchNorm, BnMode};
pub use conv::{conv2d, conv2d_counted, conv2d_reference, conv_out_dim};
pub use ops::*;

use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

/// Element type of every tensor in the build. The `f32` feature flips the
/// whole engine to single precision; the default is double precision so the
/// finite-difference oracles have headroom.
#[cfg(feature = "f32")]
pub type Elem = f32;
#[cfg(not(feature = "f32"))]
pub type Elem = f64;

/// Size of [`Elem`] in bytes, used by checkpoint headers.
pub const ELEM_BYTES: u8 = std::mem::size_of::<Elem>() as u8;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

thread_local! {
    static GRAD_ENABLED: std::cell::Cell<bool> = const { std::cell::Cell::new(true) };
}

/// Scope guard that disables graph recording (inference mode).
pub struct NoGradGuard {
    prev: bool,
}

impl NoGradGuard {
    pub fn new() -> Self {
        let prev = GRAD_ENABLED.with(|g| g.replace(false));
        NoGradGuard { prev }
    }
}

impl Default for NoGradGuard {
    fn default() -> Self {
        Self::new()
    }
}

impl Drop for NoGradGuard {
    fn drop(&mut self) {
        let prev = self.prev;
        GRAD_ENABLED.with(|g| g.set(prev));
    }
}

/// True while graph recording is active on this thread.
pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Backward rule of a recorded operation. Receives the accumulated output
/// gradient and a per-parent mask of which gradients are actually needed;
/// returns one optional gradient buffer per parent, in parent order.
pub(crate) trait Backward {
    fn backward(&self, grad: &[Elem], needs: &[bool]) -> Vec<Option<Vec<Elem>>>;
}

pub(crate) struct OpRecord {
    pub parents: Vec<Tensor>,
    pub rule: Box<dyn Backward>,
}

struct Inner {
    id: u64,
    shape: Vec<usize>,
    data: Vec<Elem>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<Elem>>>,
    op: Option<OpRecord>,
}

/// Dense tensor handle. Cloning is cheap (shared storage).
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<Inner>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Tensor(id={}, shape={:?}, requires_grad={})",
            self.inner.id,
            self.inner.shape,
            self.inner.requires_grad
        )
    }
}

impl Tensor {
    fn new(shape: Vec<usize>, data: Vec<Elem>, requires_grad: bool, op: Option<OpRecord>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            inner: Rc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data,
                requires_grad,
                grad: RefCell::new(None),
                op,
            }),
        }
    }

    /// Leaf tensor from raw data.
    pub fn from_vec(shape: &[usize], data: Vec<Elem>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Shape(format!(
                "data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Tensor::new(shape.to_vec(), data, false, None))
    }

    /// Leaf tensor of zeros.
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor::new(shape.to_vec(), vec![0.0; shape.iter().product()], false, None)
    }

    /// Leaf tensor filled with a constant.
    pub fn full(shape: &[usize], value: Elem) -> Self {
        Tensor::new(shape.to_vec(), vec![value; shape.iter().product()], false, None)
    }

    /// Scalar (shape `[1]`) leaf.
    pub fn scalar(value: Elem) -> Self {
        Tensor::new(vec![1], vec![value], false, None)
    }

    /// Marks this leaf as a trainable parameter target.
    pub fn requires_grad(self) -> Self {
        assert!(self.inner.op.is_none(), "requires_grad only applies to leaves");
        Tensor::new(self.inner.shape.clone(), self.inner.data.clone(), true, None)
    }

    pub(crate) fn from_op(shape: Vec<usize>, data: Vec<Elem>, op: OpRecord) -> Self {
        let track = grad_enabled() && op.parents.iter().any(|p| p.inner.requires_grad);
        if track {
            Tensor::new(shape, data, true, Some(op))
        } else {
            Tensor::new(shape, data, false, None)
        }
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn len(&self) -> usize {
        self.inner.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inner.data.is_empty()
    }

    pub fn data(&self) -> &[Elem] {
        &self.inner.data
    }

    pub fn needs_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.inner.op.is_none()
    }

    /// Scalar value of a one-element tensor.
    pub fn item(&self) -> Elem {
        assert_eq!(self.len(), 1, "item() requires a one-element tensor");
        self.inner.data[0]
    }

    /// Accumulated gradient, if backward has populated one.
    pub fn grad(&self) -> Option<Vec<Elem>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    fn accumulate_grad(&self, g: &[Elem]) {
        let mut cell = self.inner.grad.borrow_mut();
        match cell.as_mut() {
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(g) {
                    *a += *b;
                }
            }
            None => *cell = Some(g.to_vec()),
        }
    }

    /// Detached leaf copy sharing no graph history.
    pub fn detach(&self) -> Tensor {
        Tensor::new(self.inner.shape.clone(), self.inner.data.clone(), false, None)
    }

    /// True if every element is finite.
    pub fn all_finite(&self) -> bool {
        self.inner.data.iter().all(|v| v.is_finite())
    }

    /// Mean over all elements, computed outside the graph.
    pub fn mean_value(&self) -> Elem {
        if self.is_empty() {
            return 0.0;
        }
        self.inner.data.iter().sum::<Elem>() / self.len() as Elem
    }
}

/// Runs reverse-mode differentiation from a scalar loss. Populates the
/// `grad` cell of every `requires_grad` tensor reachable from `loss`.
pub fn backward(loss: &Tensor) {
    assert_eq!(loss.len(), 1, "backward expects a scalar loss");
    // Gather reachable nodes that carry ops, keyed by id.
    let mut nodes: HashMap<u64, Tensor> = HashMap::new();
    let mut stack = vec![loss.clone()];
    while let Some(t) = stack.pop() {
        if nodes.contains_key(&t.inner.id) {
            continue;
        }
        if let Some(op) = &t.inner.op {
            for p in &op.parents {
                if p.inner.requires_grad {
                    stack.push(p.clone());
                }
            }
        }
        nodes.insert(t.inner.id, t);
    }
    // Ids grow monotonically with creation order, so descending id order is
    // a reverse topological order of the recorded graph.
    let mut order: Vec<u64> = nodes.keys().copied().collect();
    order.sort_unstable_by(|a, b| b.cmp(a));

    let mut grads: HashMap<u64, Vec<Elem>> = HashMap::new();
    grads.insert(loss.inner.id, vec![1.0]);

    for id in order {
        let Some(g) = grads.remove(&id) else { continue };
        let t = &nodes[&id];
        if t.inner.requires_grad {
            t.accumulate_grad(&g);
        }
        if let Some(op) = &t.inner.op {
            let needs: Vec<bool> = op.parents.iter().map(|p| p.inner.requires_grad).collect();
            let contributions = op.rule.backward(&g, &needs);
            debug_assert_eq!(contributions.len(), op.parents.len());
            for (parent, contrib) in op.parents.iter().zip(contributions) {
                if let Some(c) = contrib {
                    debug_assert_eq!(c.len(), parent.len());
                    match grads.get_mut(&parent.inner.id) {
                        Some(acc) => {
                            for (a, b) in acc.iter_mut().zip(&c) {
                                *a += *b;
                            }
                        }
                        None => {
                            grads.insert(parent.inner.id, c);
                        }
                    }
                }
            }
        }
    }
}

/// Named slot holding a trainable tensor. The slot is shared between the
/// model that reads it and the optimizer that replaces its value.
#[derive(Clone)]
pub struct Param {
    name: String,
    value: Rc<RefCell<Tensor>>,
}

impl Param {
    pub fn new(name: impl Into<String>, init: Tensor) -> Self {
        Param {
            name: name.into(),
            value: Rc::new(RefCell::new(init.requires_grad())),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Current value (cheap handle clone).
    pub fn value(&self) -> Tensor {
        self.value.borrow().clone()
    }

    /// Replaces the stored tensor. The new tensor becomes a grad leaf.
    pub fn set(&self, t: Tensor) {
        *self.value.borrow_mut() = t.requires_grad();
    }

    /// Replaces the stored data, keeping the shape.
    pub fn set_data(&self, data: Vec<Elem>) {
        let shape = self.value.borrow().shape().to_vec();
        assert_eq!(shape.iter().product::<usize>(), data.len());
        *self.value.borrow_mut() = Tensor::new(shape, data, true, None);
    }

    pub fn grad(&self) -> Option<Vec<Elem>> {
        self.value.borrow().grad()
    }

    pub fn zero_grad(&self) {
        self.value.borrow().zero_grad();
    }

    /// Overwrites the accumulated gradient (used by gradient clipping).
    pub fn replace_grad(&self, g: Vec<Elem>) {
        let t = self.value.borrow();
        assert_eq!(g.len(), t.len());
        *t.inner.grad.borrow_mut() = Some(g);
    }

    /// Clamps every element into `[lo, hi]`, replacing the value in place.
    pub fn clamp(&self, lo: Elem, hi: Elem) {
        let data: Vec<Elem> = self.value().data().iter().map(|v| v.clamp(lo, hi)).collect();
        self.set_data(data);
    }
}

impl fmt::Debug for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Param({}, shape={:?})", self.name, self.value.borrow().shape())
    }
}
