//! Minimal n-dimensional tensor engine with reverse-mode automatic
//! differentiation.
//!
//! Tensors are immutable after creation and cheap to clone (the handle is an
//! `Arc`). Every op that touches a gradient-requiring input records its
//! provenance, forming a DAG that [`backward`] walks in reverse topological
//! order. Gradients accumulate into the grad slots of leaf variables, so two
//! backward passes without zeroing double the gradient.
//!
//! Element type is generic: `f64` for gradient-oracle tests, `f32` for
//! training speed.

mod backward;
mod ops;
mod store;

pub use backward::backward;
pub use store::ParamStore;

use std::fmt;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

/// Scalar element of a tensor. Implemented for `f32` and `f64`.
pub trait Elem:
    Copy
    + Send
    + Sync
    + 'static
    + fmt::Debug
    + fmt::Display
    + Default
    + PartialOrd
    + num_traits::Float
    + num_traits::FromPrimitive
    + std::iter::Sum
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
{
    const DTYPE: &'static str;
    fn of_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Elem for f32 {
    const DTYPE: &'static str = "f32";
    fn of_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Elem for f64 {
    const DTYPE: &'static str = "f64";
    fn of_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

// ---------------------------------------------------------------------------
// Allocation tracking (high-water mark for the memory benchmark)
// ---------------------------------------------------------------------------

static LIVE_BYTES: AtomicUsize = AtomicUsize::new(0);
static PEAK_BYTES: AtomicUsize = AtomicUsize::new(0);

/// Bytes currently held by live tensor storages.
pub fn live_bytes() -> usize {
    LIVE_BYTES.load(Ordering::Relaxed)
}

/// High-water mark of tensor storage since the last [`reset_peak`].
pub fn peak_bytes() -> usize {
    PEAK_BYTES.load(Ordering::Relaxed)
}

/// Resets the high-water mark to the current live amount.
pub fn reset_peak() {
    PEAK_BYTES.store(LIVE_BYTES.load(Ordering::Relaxed), Ordering::Relaxed);
}

/// Owned flat buffer whose size is charged against the allocation tracker.
pub(crate) struct Storage<E: Elem> {
    data: Vec<E>,
}

impl<E: Elem> Storage<E> {
    fn new(data: Vec<E>) -> Self {
        let bytes = data.len() * std::mem::size_of::<E>();
        let live = LIVE_BYTES.fetch_add(bytes, Ordering::Relaxed) + bytes;
        PEAK_BYTES.fetch_max(live, Ordering::Relaxed);
        Storage { data }
    }
}

impl<E: Elem> Drop for Storage<E> {
    fn drop(&mut self) {
        let bytes = self.data.len() * std::mem::size_of::<E>();
        LIVE_BYTES.fetch_sub(bytes, Ordering::Relaxed);
    }
}

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

pub type TensorId = u64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryKind {
    Sigmoid,
    Silu,
    Softplus,
    Relu,
    Abs,
    Neg,
    Exp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
}

/// Backward rule for an op the engine does not know natively (e.g. the
/// selective scan). Returns one optional gradient buffer per parent, in the
/// order of `parents`.
pub trait CustomVjp<E: Elem>: Send + Sync {
    fn name(&self) -> &'static str;
    fn backward(&self, parents: &[Tensor<E>], output: &Tensor<E>, grad_out: &[E])
        -> Vec<Option<Vec<E>>>;
}

pub(crate) enum Op<E: Elem> {
    Reshape {
        x: Tensor<E>,
    },
    Permute {
        x: Tensor<E>,
        order: Vec<usize>,
    },
    Matmul {
        a: Tensor<E>,
        b: Tensor<E>,
    },
    BatchMatmul {
        a: Tensor<E>,
        b: Tensor<E>,
    },
    Conv2d {
        x: Tensor<E>,
        w: Tensor<E>,
        bias: Tensor<E>,
        pad: usize,
    },
    Conv1dDepthwise {
        x: Tensor<E>,
        w: Tensor<E>,
        bias: Tensor<E>,
    },
    LayerNorm {
        x: Tensor<E>,
        gamma: Tensor<E>,
        beta: Tensor<E>,
        eps: E,
    },
    Unary {
        x: Tensor<E>,
        kind: UnaryKind,
    },
    Binary {
        a: Tensor<E>,
        b: Tensor<E>,
        kind: BinaryKind,
    },
    Scale {
        x: Tensor<E>,
        c: E,
    },
    Reduce {
        x: Tensor<E>,
        axes: Vec<usize>,
        kind: ReduceKind,
    },
    PixelShuffle {
        x: Tensor<E>,
        s: usize,
    },
    PixelUnshuffle {
        x: Tensor<E>,
        s: usize,
    },
    Reverse {
        x: Tensor<E>,
        axis: usize,
    },
    Softmax {
        x: Tensor<E>,
    },
    Custom {
        parents: Vec<Tensor<E>>,
        vjp: Arc<dyn CustomVjp<E>>,
    },
}

impl<E: Elem> Op<E> {
    pub(crate) fn parents(&self) -> Vec<Tensor<E>> {
        match self {
            Op::Reshape { x }
            | Op::Permute { x, .. }
            | Op::Unary { x, .. }
            | Op::Scale { x, .. }
            | Op::Reduce { x, .. }
            | Op::PixelShuffle { x, .. }
            | Op::PixelUnshuffle { x, .. }
            | Op::Reverse { x, .. }
            | Op::Softmax { x } => vec![x.clone()],
            Op::Matmul { a, b } | Op::BatchMatmul { a, b } | Op::Binary { a, b, .. } => {
                vec![a.clone(), b.clone()]
            }
            Op::Conv2d { x, w, bias, .. } | Op::Conv1dDepthwise { x, w, bias } => {
                vec![x.clone(), w.clone(), bias.clone()]
            }
            Op::LayerNorm { x, gamma, beta, .. } => vec![x.clone(), gamma.clone(), beta.clone()],
            Op::Custom { parents, .. } => parents.clone(),
        }
    }
}

pub(crate) struct TensorInner<E: Elem> {
    id: TensorId,
    shape: Vec<usize>,
    storage: Arc<Storage<E>>,
    op: Option<Op<E>>,
    variable: bool,
    requires_grad: bool,
    grad: Mutex<Option<Vec<E>>>,
}

/// Handle to an immutable n-dimensional array, optionally carrying backward
/// provenance. Cloning is cheap.
pub struct Tensor<E: Elem> {
    inner: Arc<TensorInner<E>>,
}

impl<E: Elem> Clone for Tensor<E> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Arc::clone(&self.inner),
        }
    }
}

impl<E: Elem> fmt::Debug for Tensor<E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Tensor<{}>(id={}, shape={:?}, var={})",
            E::DTYPE,
            self.inner.id,
            self.inner.shape,
            self.inner.variable
        )
    }
}

pub(crate) fn product(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Row-major strides for a shape.
pub(crate) fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

impl<E: Elem> Tensor<E> {
    fn build(data: Vec<E>, shape: Vec<usize>, op: Option<Op<E>>, variable: bool) -> Self {
        assert_eq!(
            data.len(),
            product(&shape),
            "tensor data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        let requires_grad = variable
            || op
                .as_ref()
                .map(|o| o.parents().iter().any(|p| p.requires_grad()))
                .unwrap_or(false);
        // Provenance is only kept when a gradient can flow through it.
        let op = if requires_grad { op } else { None };
        Tensor {
            inner: Arc::new(TensorInner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                storage: Arc::new(Storage::new(data)),
                op,
                variable,
                requires_grad,
                grad: Mutex::new(None),
            }),
        }
    }

    pub(crate) fn from_op(data: Vec<E>, shape: Vec<usize>, op: Op<E>) -> Self {
        Self::build(data, shape, Some(op), false)
    }

    /// New handle over existing storage (zero-copy reshape).
    pub(crate) fn from_shared(
        storage: Arc<Storage<E>>,
        shape: Vec<usize>,
        op: Option<Op<E>>,
        requires_grad: bool,
    ) -> Self {
        assert_eq!(storage.data.len(), product(&shape));
        let op = if requires_grad { op } else { None };
        Tensor {
            inner: Arc::new(TensorInner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                storage,
                op,
                variable: false,
                requires_grad,
                grad: Mutex::new(None),
            }),
        }
    }

    pub(crate) fn storage(&self) -> Arc<Storage<E>> {
        Arc::clone(&self.inner.storage)
    }

    /// Constant leaf; no gradient is tracked through it.
    pub fn from_vec(data: Vec<E>, shape: &[usize]) -> Self {
        Self::build(data, shape.to_vec(), None, false)
    }

    /// Leaf variable; [`backward`] accumulates into its grad slot.
    pub fn var(data: Vec<E>, shape: &[usize]) -> Self {
        Self::build(data, shape.to_vec(), None, true)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::from_vec(vec![E::zero(); product(shape)], shape)
    }

    pub fn full(shape: &[usize], value: E) -> Self {
        Self::from_vec(vec![value; product(shape)], shape)
    }

    pub fn scalar(value: E) -> Self {
        Self::from_vec(vec![value], &[])
    }

    pub fn id(&self) -> TensorId {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn rank(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn elem_count(&self) -> usize {
        product(&self.inner.shape)
    }

    pub fn data(&self) -> &[E] {
        &self.inner.storage.data
    }

    pub fn to_vec(&self) -> Vec<E> {
        self.data().to_vec()
    }

    /// Value of a scalar (rank-0 or single-element) tensor.
    pub fn item(&self) -> E {
        assert_eq!(
            self.elem_count(),
            1,
            "item() on non-scalar tensor of shape {:?}",
            self.shape()
        );
        self.data()[0]
    }

    pub fn is_variable(&self) -> bool {
        self.inner.variable
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub(crate) fn op(&self) -> Option<&Op<E>> {
        self.inner.op.as_ref()
    }

    /// Same values, no provenance, not a variable. Gradients stop here.
    pub fn detach(&self) -> Tensor<E> {
        Tensor {
            inner: Arc::new(TensorInner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape: self.inner.shape.clone(),
                storage: Arc::clone(&self.inner.storage),
                op: None,
                variable: false,
                requires_grad: false,
                grad: Mutex::new(None),
            }),
        }
    }

    /// Snapshot of the accumulated gradient, if any.
    pub fn grad(&self) -> Option<Vec<E>> {
        self.inner.grad.lock().unwrap().clone()
    }

    pub fn zero_grad(&self) {
        let mut slot = self.inner.grad.lock().unwrap();
        *slot = Some(vec![E::zero(); self.elem_count()]);
    }

    pub fn clear_grad(&self) {
        *self.inner.grad.lock().unwrap() = None;
    }

    pub(crate) fn accumulate_grad(&self, contribution: &[E]) {
        let mut slot = self.inner.grad.lock().unwrap();
        match slot.as_mut() {
            Some(buf) => {
                for (g, c) in buf.iter_mut().zip(contribution) {
                    *g += *c;
                }
            }
            None => *slot = Some(contribution.to_vec()),
        }
    }

    /// Cast element type; the result is a constant leaf.
    pub fn cast<F: Elem>(&self) -> Tensor<F> {
        let data = self.data().iter().map(|v| F::of_f64(v.as_f64())).collect();
        Tensor::from_vec(data, self.shape())
    }
}
