//! Dense tensors with reverse-mode automatic differentiation.
//!
//! Every differentiable operation records its inputs on the produced
//! tensor. Backward passes are themselves built from recorded operations,
//! so a gradient computed with `create_graph = true` can be differentiated
//! again (needed by the gradient-penalty term).
//!
//! Convolutions use cross-correlation semantics (no kernel flip).

mod autograd;
mod conv;
pub mod gradcheck;
mod layers;
mod ops;

use std::cell::Cell;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;

pub use autograd::{backward, grad, Gradients, Tape};
pub use conv::ConvGeom;

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Returns whether operations on this thread currently record gradients.
pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Runs `f` with gradient recording switched on or off, restoring the
/// previous mode afterwards (also on panic).
pub fn with_grad_mode<R>(enabled: bool, f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|g| g.replace(enabled)));
    f()
}

/// Runs `f` without recording gradients.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    with_grad_mode(false, f)
}

/// An immutable n-dimensional array, cheap to clone (reference counted).
#[derive(Clone)]
pub struct Tensor<T: Scalar> {
    node: Arc<Node<T>>,
}

pub(crate) struct Node<T: Scalar> {
    id: u64,
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    op: Option<Op<T>>,
}

/// Recorded primitive. Inputs are held by value so the graph keeps every
/// value the backward pass needs alive.
pub(crate) enum Op<T: Scalar> {
    Add(Tensor<T>, Tensor<T>),
    Sub(Tensor<T>, Tensor<T>),
    Mul(Tensor<T>, Tensor<T>),
    Scale(Tensor<T>, T),
    Shift(Tensor<T>),
    MaskMul(Tensor<T>, Arc<Vec<T>>),
    Clamp(Tensor<T>, Arc<Vec<T>>),
    Pow(Tensor<T>, T),
    Log(Tensor<T>),
    SumTo(Tensor<T>),
    BroadcastTo(Tensor<T>),
    Reshape(Tensor<T>),
    MatMul(Tensor<T>, Tensor<T>),
    Transpose(Tensor<T>),
    Conv(Tensor<T>, Tensor<T>, ConvGeom),
    ConvInputGrad(Tensor<T>, Tensor<T>, ConvGeom),
    ConvWeightGrad(Tensor<T>, Tensor<T>, ConvGeom),
    AvgPool(Tensor<T>, usize),
    AvgUnpool(Tensor<T>, usize),
    PixelShuffle(Tensor<T>, usize),
    PixelUnshuffle(Tensor<T>, usize),
    PadCircular(Tensor<T>, usize),
    FoldCircular(Tensor<T>, usize),
}

// Long graphs would otherwise drop recursively, one stack frame chain per
// node.
impl<T: Scalar> Drop for Node<T> {
    fn drop(&mut self) {
        let mut pending: Vec<Op<T>> = self.op.take().into_iter().collect();
        while let Some(op) = pending.pop() {
            for input in op.into_inputs() {
                if let Ok(mut node) = Arc::try_unwrap(input.node) {
                    pending.extend(node.op.take());
                }
            }
        }
    }
}

impl<T: Scalar> Op<T> {
    fn into_inputs(self) -> Vec<Tensor<T>> {
        use Op::*;
        match self {
            Add(a, b) | Sub(a, b) | Mul(a, b) | MatMul(a, b) => vec![a, b],
            Conv(a, b, _) | ConvInputGrad(a, b, _) | ConvWeightGrad(a, b, _) => vec![a, b],
            Scale(a, _) | Shift(a) | MaskMul(a, _) | Clamp(a, _) | Pow(a, _) | Log(a) => vec![a],
            SumTo(a) | BroadcastTo(a) | Reshape(a) | Transpose(a) => vec![a],
            AvgPool(a, _) | AvgUnpool(a, _) | PixelShuffle(a, _) | PixelUnshuffle(a, _) => vec![a],
            PadCircular(a, _) | FoldCircular(a, _) => vec![a],
        }
    }

    pub(crate) fn inputs(&self) -> Vec<&Tensor<T>> {
        use Op::*;
        match self {
            Add(a, b) | Sub(a, b) | Mul(a, b) | MatMul(a, b) => vec![a, b],
            Conv(a, b, _) | ConvInputGrad(a, b, _) | ConvWeightGrad(a, b, _) => vec![a, b],
            Scale(a, _) | Shift(a) | MaskMul(a, _) | Clamp(a, _) | Pow(a, _) | Log(a) => vec![a],
            SumTo(a) | BroadcastTo(a) | Reshape(a) | Transpose(a) => vec![a],
            AvgPool(a, _) | AvgUnpool(a, _) | PixelShuffle(a, _) | PixelUnshuffle(a, _) => vec![a],
            PadCircular(a, _) | FoldCircular(a, _) => vec![a],
        }
    }

    fn name(&self) -> &'static str {
        use Op::*;
        match self {
            Add(..) => "add",
            Sub(..) => "sub",
            Mul(..) => "mul",
            Scale(..) => "scale",
            Shift(..) => "shift",
            MaskMul(..) => "mask_mul",
            Clamp(..) => "clamp",
            Pow(..) => "pow",
            Log(..) => "log",
            SumTo(..) => "sum_to",
            BroadcastTo(..) => "broadcast_to",
            Reshape(..) => "reshape",
            MatMul(..) => "matmul",
            Transpose(..) => "transpose",
            Conv(..) => "conv2d",
            ConvInputGrad(..) => "conv2d_input_grad",
            ConvWeightGrad(..) => "conv2d_weight_grad",
            AvgPool(..) => "avg_pool2d",
            AvgUnpool(..) => "avg_unpool2d",
            PixelShuffle(..) => "pixel_shuffle",
            PixelUnshuffle(..) => "pixel_unshuffle",
            PadCircular(..) => "pad_circular",
            FoldCircular(..) => "fold_circular",
        }
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Scalar> Tensor<T> {
    fn from_node(shape: Vec<usize>, data: Vec<T>, requires_grad: bool, op: Option<Op<T>>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor {
            node: Arc::new(Node {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data,
                requires_grad,
                op,
            }),
        }
    }

    /// Creates the result of an operation; records `op` only when gradient
    /// mode is on and some input requires a gradient.
    pub(crate) fn from_op(shape: Vec<usize>, data: Vec<T>, op: Op<T>) -> Self {
        let track = is_grad_enabled() && op.inputs().iter().any(|t| t.requires_grad());
        Self::from_node(shape, data, track, track.then_some(op))
    }

    /// Leaf tensor from a shape and row-major data.
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(shape_err!(
                "shape {:?} holds {} elements but {} were given",
                shape,
                numel(shape),
                data.len()
            ));
        }
        Ok(Self::from_node(shape.to_vec(), data, false, None))
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self::from_node(shape.to_vec(), vec![value; numel(shape)], false, None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    /// Rank-0 tensor.
    pub fn scalar(value: T) -> Self {
        Self::from_node(Vec::new(), vec![value], false, None)
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let data = (0..numel(shape)).map(&mut f).collect();
        Self::from_node(shape.to_vec(), data, false, None)
    }

    /// A new leaf with the same values that participates in differentiation.
    pub fn requires_grad_leaf(&self) -> Self {
        Self::from_node(self.node.shape.clone(), self.node.data.clone(), true, None)
    }

    /// A new leaf with the same values, cut from any graph.
    pub fn detach(&self) -> Self {
        if self.node.op.is_none() && !self.node.requires_grad {
            return self.clone();
        }
        Self::from_node(self.node.shape.clone(), self.node.data.clone(), false, None)
    }

    pub fn id(&self) -> u64 {
        self.node.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn rank(&self) -> usize {
        self.node.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.node.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.node.data
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.node.data.clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.node.op.is_none()
    }

    pub(crate) fn op(&self) -> Option<&Op<T>> {
        self.node.op.as_ref()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.numel() != 1 {
            return Err(shape_err!("item() on tensor of shape {:?}", self.shape()));
        }
        Ok(self.node.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.node.data.iter().all(|v| v.is_finite())
    }

    /// Extents of a rank-4 `[N, C, H, W]` tensor.
    pub fn dims4(&self) -> Result<[usize; 4]> {
        match *self.shape() {
            [n, c, h, w] => Ok([n, c, h, w]),
            _ => Err(shape_err!("expected a rank-4 [N, C, H, W] tensor, got {:?}", self.shape())),
        }
    }

    /// Converts element type (values pass through `f64`).
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        let data = self.data().iter().map(|v| U::of(v.to_f64_lossless())).collect();
        Tensor::from_node(self.shape().to_vec(), data, false, None)
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = f.debug_struct("Tensor");
        s.field("shape", &self.node.shape);
        if self.numel() <= 16 {
            s.field("data", &self.node.data);
        }
        if let Some(op) = &self.node.op {
            s.field("op", &op.name());
        }
        s.field("requires_grad", &self.node.requires_grad).finish()
    }
}

