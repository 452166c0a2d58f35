use std::collections::{HashMap, HashSet};

use super::conv::{conv_input_grad, conv_weight_grad};
use super::{with_grad_mode, Op, Tensor};
use crate::error::{shape_err, Result};
use crate::scalar::Scalar;

/// Every differentiable node reachable from a root, in creation order.
///
/// Node ids increase monotonically with creation and an operation is always
/// created after its inputs, so ascending id order is a topological order.
pub struct Tape<T: Scalar> {
    nodes: Vec<Tensor<T>>,
}

impl<T: Scalar> Tape<T> {
    pub fn record(root: &Tensor<T>) -> Self {
        let mut seen = HashSet::new();
        let mut nodes = Vec::new();
        let mut stack = vec![root.clone()];
        while let Some(t) = stack.pop() {
            if !t.requires_grad() || !seen.insert(t.id()) {
                continue;
            }
            if let Some(op) = t.op() {
                stack.extend(op.inputs().into_iter().cloned());
            }
            nodes.push(t);
        }
        nodes.sort_by_key(|t| t.id());
        Tape { nodes }
    }

    pub fn nodes(&self) -> &[Tensor<T>] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Gradients of a scalar with respect to graph leaves, keyed by tensor id.
#[derive(Default)]
pub struct Gradients<T: Scalar> {
    by_id: HashMap<u64, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, t: &Tensor<T>) -> Option<&Tensor<T>> {
        self.by_id.get(&t.id())
    }

    /// Gradient for `t`, or zeros when `t` did not influence the root.
    pub fn get_or_zeros(&self, t: &Tensor<T>) -> Tensor<T> {
        self.get(t).cloned().unwrap_or_else(|| Tensor::zeros(t.shape()))
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }
}

/// Gradients of a single-element `root` with respect to every leaf that
/// requires one. The returned gradients are constants.
pub fn backward<T: Scalar>(root: &Tensor<T>) -> Result<Gradients<T>> {
    let by_id = propagate(root, &HashSet::new(), false)?;
    Ok(Gradients { by_id })
}

/// Gradients of `root` with respect to each tensor in `wrt` (leaf or not).
///
/// With `create_graph` the backward computation is itself recorded, so the
/// results can be differentiated again.
pub fn grad<T: Scalar>(root: &Tensor<T>, wrt: &[&Tensor<T>], create_graph: bool) -> Result<Vec<Tensor<T>>> {
    let wanted: HashSet<u64> = wrt.iter().map(|t| t.id()).collect();
    let found = propagate(root, &wanted, create_graph)?;
    Ok(wrt
        .iter()
        .map(|t| found.get(&t.id()).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect())
}

fn propagate<T: Scalar>(root: &Tensor<T>, wanted: &HashSet<u64>, create_graph: bool) -> Result<HashMap<u64, Tensor<T>>> {
    if root.numel() != 1 {
        return Err(shape_err!("backward needs a single-element loss, got shape {:?}", root.shape()));
    }
    let tape = Tape::record(root);
    with_grad_mode(create_graph, || {
        let mut pending: HashMap<u64, Tensor<T>> = HashMap::new();
        let mut result = HashMap::new();
        if root.requires_grad() {
            pending.insert(root.id(), Tensor::ones(root.shape()));
        }
        for node in tape.nodes().iter().rev() {
            let Some(g) = pending.remove(&node.id()) else {
                continue;
            };
            if wanted.contains(&node.id()) || (wanted.is_empty() && node.is_leaf()) {
                result.insert(node.id(), g.clone());
            }
            let Some(op) = node.op() else {
                continue;
            };
            for (input, gi) in vjp(op, &g)? {
                let acc = match pending.remove(&input.id()) {
                    Some(prev) => prev.add(&gi)?,
                    None => gi,
                };
                pending.insert(input.id(), acc);
            }
        }
        Ok(result)
    })
}

/// Vector-Jacobian products of one operation, for inputs needing gradients.
fn vjp<T: Scalar>(op: &Op<T>, g: &Tensor<T>) -> Result<Vec<(Tensor<T>, Tensor<T>)>> {
    let mut out = Vec::with_capacity(2);
    let mut push = |input: &Tensor<T>, f: &dyn Fn() -> Result<Tensor<T>>| -> Result<()> {
        if input.requires_grad() {
            out.push((input.clone(), f()?));
        }
        Ok(())
    };
    match op {
        Op::Add(a, b) => {
            push(a, &|| Ok(g.clone()))?;
            push(b, &|| Ok(g.clone()))?;
        }
        Op::Sub(a, b) => {
            push(a, &|| Ok(g.clone()))?;
            push(b, &|| Ok(g.neg()))?;
        }
        Op::Mul(a, b) => {
            push(a, &|| g.mul(b))?;
            push(b, &|| g.mul(a))?;
        }
        Op::Scale(a, c) => push(a, &|| Ok(g.scale(*c)))?,
        Op::Shift(a) => push(a, &|| Ok(g.clone()))?,
        Op::MaskMul(a, m) | Op::Clamp(a, m) => push(a, &|| Ok(g.mask_mul(m.clone())))?,
        Op::Pow(a, p) => push(a, &|| g.mul(&a.powf(*p - T::one()).scale(*p)))?,
        Op::Log(a) => push(a, &|| g.mul(&a.powf(-T::one())))?,
        Op::SumTo(a) => push(a, &|| g.broadcast_to(a.shape()))?,
        Op::BroadcastTo(a) => push(a, &|| g.sum_to(a.shape()))?,
        Op::Reshape(a) => push(a, &|| g.reshape(a.shape()))?,
        Op::MatMul(a, b) => {
            push(a, &|| g.matmul(&b.transpose()?))?;
            push(b, &|| a.transpose()?.matmul(g))?;
        }
        Op::Transpose(a) => push(a, &|| g.transpose())?,
        Op::Conv(x, w, geom) => {
            push(x, &|| conv_input_grad(g, w, *geom))?;
            push(w, &|| conv_weight_grad(x, g, *geom))?;
        }
        Op::ConvInputGrad(y, w, geom) => {
            push(y, &|| g.conv2d(w, geom.stride, geom.padding))?;
            push(w, &|| conv_weight_grad(g, y, *geom))?;
        }
        Op::ConvWeightGrad(x, y, geom) => {
            push(x, &|| conv_input_grad(y, g, *geom))?;
            push(y, &|| x.conv2d(g, geom.stride, geom.padding))?;
        }
        Op::AvgPool(a, k) => push(a, &|| g.avg_unpool2d(*k))?,
        Op::AvgUnpool(a, k) => push(a, &|| g.avg_pool2d(*k))?,
        Op::PixelShuffle(a, r) => push(a, &|| g.pixel_unshuffle(*r))?,
        Op::PixelUnshuffle(a, r) => push(a, &|| g.pixel_shuffle(*r))?,
        Op::PadCircular(a, p) => push(a, &|| g.fold_circular(*p))?,
        Op::FoldCircular(a, p) => push(a, &|| g.pad_circular(*p))?,
    }
    Ok(out)
}
