//! Minimal dense-tensor engine with reverse-mode automatic differentiation.
//!
//! Tensors are immutable 4-D arrays in (batch, channel, height, width) order; every
//! forward operation eagerly computes its result and records its inputs, so a value
//! is simultaneously a node of the computation graph. [`Tensor::backward`] runs a
//! reverse sweep over the recorded graph and returns per-leaf gradients.
//!
//! The operator set is exactly what the restoration network and its losses need;
//! there is no broadcasting beyond the few patterns those ops require. Forward
//! arithmetic accumulates in the element type (run the graph at f64 for gradient
//! checks); normalization statistics are always computed in f64.
//!
//! Lower-rank values (biases, norm affine weights, temperatures) are stored as
//! `(1, C, 1, 1)` tensors; scalars as `(1, 1, 1, 1)`.

mod autograd;
mod gradcheck;
mod ops;
mod optim;

pub use autograd::GradStore;
pub use gradcheck::{
    check_gradients, compare_gradients, GradCheckReport, ABS_TOL, FD_STEP, REL_TOL,
};
pub use ops::concat_channels;
pub use optim::{cosine_lr, AdamW, AdamWConfig};

use std::cell::{Ref, RefCell};
use std::collections::HashMap;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dimensions in (batch, channel, height, width) order.
pub type Shape = [usize; 4];

pub fn numel(shape: Shape) -> usize {
    shape.iter().product()
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

pub(crate) struct Inner<T: Scalar> {
    id: u64,
    shape: Shape,
    /// Interior mutability serves two callers only: the optimizer updating leaf
    /// parameters between steps, and finite-difference probes nudging leaf inputs.
    /// Graph nodes are never mutated after construction.
    data: RefCell<Vec<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// A value in the computation graph; cloning is a cheap handle copy.
pub struct Tensor<T: Scalar>(Rc<Inner<T>>);

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor(Rc::clone(&self.0))
    }
}

impl<T: Scalar> std::fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.0.id)
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

/// Recorded producing operation of a graph node, holding handles to its inputs.
pub(crate) enum Op<T: Scalar> {
    Leaf,
    Conv2d { x: Tensor<T>, w: Tensor<T>, b: Option<Tensor<T>>, stride: usize, padding: usize },
    DwConv2d { x: Tensor<T>, w: Tensor<T>, b: Option<Tensor<T>> },
    Conv1x1 { x: Tensor<T>, w: Tensor<T>, b: Option<Tensor<T>> },
    LayerNorm { x: Tensor<T>, gamma: Tensor<T>, beta: Tensor<T>, eps: f64 },
    InstanceNorm { x: Tensor<T>, eps: f64 },
    Gelu { x: Tensor<T> },
    Relu { x: Tensor<T> },
    SoftmaxLast { x: Tensor<T> },
    Matmul { a: Tensor<T>, b: Tensor<T> },
    TransposeLast2 { x: Tensor<T> },
    Reshape { x: Tensor<T> },
    PixelShuffle { x: Tensor<T>, r: usize },
    PixelUnshuffle { x: Tensor<T>, r: usize },
    Add { a: Tensor<T>, b: Tensor<T> },
    Sub { a: Tensor<T>, b: Tensor<T> },
    Mul { a: Tensor<T>, b: Tensor<T> },
    Scale { x: Tensor<T>, c: f64 },
    Abs { x: Tensor<T> },
    DivChannels { x: Tensor<T>, s: Tensor<T> },
    ConcatChannels { xs: Vec<Tensor<T>> },
    SliceChannels { x: Tensor<T>, from: usize, to: usize },
    MeanAll { x: Tensor<T> },
}

impl<T: Scalar> Tensor<T> {
    pub(crate) fn from_op(shape: Shape, data: Vec<T>, op: Op<T>, requires_grad: bool) -> Self {
        debug_assert_eq!(data.len(), numel(shape));
        debug_assert!(
            data.iter().all(|v| v.is_finite()),
            "non-finite value produced by a forward op"
        );
        Tensor(Rc::new(Inner {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data: RefCell::new(data),
            op,
            requires_grad,
        }))
    }

    /// A graph leaf. Gradients are collected only for leaves created with
    /// `requires_grad = true`.
    pub fn leaf(shape: Shape, data: Vec<T>, requires_grad: bool) -> Self {
        assert_eq!(data.len(), numel(shape), "leaf data length mismatch");
        Tensor::from_op(shape, data, Op::Leaf, requires_grad)
    }

    pub fn zeros(shape: Shape) -> Self {
        Tensor::leaf(shape, vec![T::from_f64(0.0); numel(shape)], false)
    }

    pub fn full(shape: Shape, v: f64) -> Self {
        Tensor::leaf(shape, vec![T::from_f64(v); numel(shape)], false)
    }

    pub fn scalar(v: f64) -> Self {
        Tensor::leaf([1, 1, 1, 1], vec![T::from_f64(v)], false)
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn shape(&self) -> Shape {
        self.0.shape
    }

    pub fn numel(&self) -> usize {
        numel(self.0.shape)
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn data(&self) -> Ref<'_, Vec<T>> {
        self.0.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.0.data.borrow().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.numel(), 1, "item() on non-scalar tensor");
        self.0.data.borrow()[0]
    }

    pub fn is_finite(&self) -> bool {
        self.0.data.borrow().iter().all(|v| v.is_finite())
    }

    /// Replaces the stored values of a leaf. Used by the optimizer and by
    /// finite-difference probes; calling this on an interior graph node would
    /// desynchronize recorded values and is forbidden.
    pub fn set_data(&self, data: Vec<T>) {
        assert!(matches!(self.0.op, Op::Leaf), "set_data on non-leaf tensor");
        assert_eq!(data.len(), self.numel(), "set_data length mismatch");
        *self.0.data.borrow_mut() = data;
    }

    /// In-place elementwise edit of a leaf's values.
    pub fn update_data(&self, f: impl FnOnce(&mut [T])) {
        assert!(matches!(self.0.op, Op::Leaf), "update_data on non-leaf tensor");
        f(self.0.data.borrow_mut().as_mut_slice());
    }

    pub(crate) fn op(&self) -> &Op<T> {
        &self.0.op
    }

    /// Scalar-loss reverse sweep; returns gradients for every reachable
    /// `requires_grad` leaf.
    pub fn backward(&self) -> Result<GradStore<T>> {
        let mut store = GradStore::new();
        self.backward_into(&mut store)?;
        Ok(store)
    }

    /// Like [`Tensor::backward`] but accumulates into an existing store, so two
    /// sweeps without a reset sum their contributions.
    pub fn backward_into(&self, store: &mut GradStore<T>) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Numeric(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        autograd::backward(self, store);
        Ok(())
    }
}

/// An ordered, uniquely named collection of trainable leaf tensors.
///
/// Order is insertion order and is the canonical order for checkpoint records and
/// optimizer state, so runs are reproducible byte for byte.
pub struct ParamSet<T: Scalar> {
    entries: Vec<(String, Tensor<T>)>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self { entries: Vec::new(), index: HashMap::new() }
    }

    /// Registers a trainable tensor under a unique name and returns its handle.
    pub fn insert(&mut self, name: &str, shape: Shape, data: Vec<T>) -> Tensor<T> {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter name {name}"
        );
        let t = Tensor::leaf(shape, data, true);
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push((name.to_string(), t.clone()));
        t
    }

    /// Looks up a parameter; panics on unknown names (a wiring bug, not an input error).
    pub fn get(&self, name: &str) -> &Tensor<T> {
        match self.index.get(name) {
            Some(&i) => &self.entries[i].1,
            None => panic!("unknown parameter {name}"),
        }
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    /// Total number of scalar values across all parameters.
    pub fn value_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }
}
