//! Tape of executed operations and the reverse sweep over it.
//!
//! Nodes are appended in execution order, so index order is already a
//! topological order; `backward` walks it once from the root down.

use std::collections::HashMap;

use super::params::{Grads, ParamId, ParamStore};
use super::tensor::Tensor;
use super::{elementwise, linalg, reduce, shape_ops};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// Vector-Jacobian product for an operation whose forward pass was computed
/// outside the graph.
pub trait CustomOp<S: Scalar>: Send + Sync {
    fn name(&self) -> &'static str;

    /// Gradients for each input (aligned with the inputs passed to
    /// [`Graph::custom`]); `None` means no gradient flows to that input.
    fn backward(
        &self,
        inputs: &[&Tensor<S>],
        output: &Tensor<S>,
        grad_output: &[S],
    ) -> Vec<Option<Vec<S>>>;
}

pub(crate) enum Op<S: Scalar> {
    Leaf,
    Unary(elementwise::UnaryKind<S>),
    Binary(elementwise::BinaryKind),
    Sum { axis: Option<usize> },
    Mean { axis: Option<usize> },
    Reshape,
    Permute { perm: Vec<usize> },
    Concat { axis: usize },
    Narrow { axis: usize, start: usize },
    RepeatInterleave { axis: usize, times: usize },
    Gather { indices: Vec<usize> },
    MatMul { trans_b: bool },
    Conv1d(linalg::ConvSaved<S>),
    DepthwiseConv1d { pad_left: usize },
    Softmax { axis: usize },
    LogSoftmax { axis: usize },
    LayerNorm { xhat: Vec<S>, inv_std: Vec<S> },
    Nll { targets: Vec<usize> },
    StraightThrough,
    Custom(Box<dyn CustomOp<S>>),
}

struct Node<S: Scalar> {
    value: Tensor<S>,
    inputs: Vec<Var>,
    op: Op<S>,
    requires_grad: bool,
    grad: Option<Vec<S>>,
}

/// Recorded computation. Parameters are pulled from an optional
/// [`ParamStore`] and cached so each appears as a single leaf.
pub struct Graph<'p, S: Scalar> {
    nodes: Vec<Node<S>>,
    store: Option<&'p ParamStore<S>>,
    param_vars: HashMap<ParamId, Var>,
    track_params: bool,
    retained: Vec<bool>,
}

impl<S: Scalar> Default for Graph<'_, S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, S: Scalar> Graph<'p, S> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), store: None, param_vars: HashMap::new(), track_params: true, retained: Vec::new() }
    }

    /// Graph whose parameter leaves require gradients (unless frozen).
    pub fn with_params(store: &'p ParamStore<S>) -> Self {
        Graph { store: Some(store), ..Self::new() }
    }

    /// Graph for forward-only evaluation: parameters never require gradients.
    pub fn inference(store: &'p ParamStore<S>) -> Self {
        Graph { store: Some(store), track_params: false, ..Self::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// New leaf holding `value`.
    pub fn leaf(&mut self, value: Tensor<S>, requires_grad: bool) -> Var {
        self.push_raw(value, Vec::new(), Op::Leaf, requires_grad)
    }

    /// Leaf that never receives gradient.
    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.leaf(value, false)
    }

    pub fn scalar(&mut self, value: S) -> Var {
        self.constant(Tensor::scalar(value))
    }

    /// Leaf bound to a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let store = self.store.expect("graph has no parameter store");
        let requires = self.track_params && !store.is_frozen(id);
        let v = self.leaf(store.get(id).clone(), requires);
        self.param_vars.insert(id, v);
        v
    }

    /// Makes [`Graph::param`] return the given nodes instead of fresh leaves.
    pub fn bind_params(&mut self, pairs: impl IntoIterator<Item = (ParamId, Var)>) {
        self.param_vars.extend(pairs);
    }

    /// Stop-gradient: a constant copy of `v`'s current value.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Keeps the gradient of an intermediate node so [`Graph::grad`] can
    /// report it after the next backward pass.
    pub fn retain_grad(&mut self, v: Var) {
        if self.retained.len() <= v.0 {
            self.retained.resize(v.0 + 1, false);
        }
        self.retained[v.0] = true;
    }

    /// Accumulated gradient of a leaf (or retained node) after [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&[S]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// Records a custom operation whose output was computed by the caller.
    pub fn custom(&mut self, inputs: &[Var], output: Tensor<S>, op: Box<dyn CustomOp<S>>) -> Var {
        self.push(output, inputs.to_vec(), Op::Custom(op))
    }

    pub(crate) fn push(&mut self, value: Tensor<S>, inputs: Vec<Var>, op: Op<S>) -> Var {
        let requires = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push_raw(value, inputs, op, requires)
    }

    fn push_raw(&mut self, value: Tensor<S>, inputs: Vec<Var>, op: Op<S>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, inputs, op, requires_grad, grad: None });
        Var(self.nodes.len() - 1)
    }

    /// Reverse sweep from a scalar root; leaf gradients accumulate across calls.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let root_shape = self.shape(root).to_vec();
        if self.value(root).numel() != 1 {
            return Err(Error::NonScalarRoot(root_shape));
        }
        let mut grads: Vec<Option<Vec<S>>> = Vec::with_capacity(root.0 + 1);
        grads.resize_with(root.0 + 1, || None);
        grads[root.0] = Some(vec![S::one()]);
        let mut leaf_grads = Vec::new();
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(gout) = grads[i].take() else { continue };
            if let Op::Leaf = node.op {
                leaf_grads.push((i, gout));
                continue;
            }
            if self.retained.get(i).copied().unwrap_or(false) {
                leaf_grads.push((i, gout.clone()));
            }
            let in_vals: Vec<&Tensor<S>> = node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            let in_grads = backward_op(&node.op, &in_vals, &node.value, &gout);
            debug_assert_eq!(in_grads.len(), node.inputs.len());
            for (input, g) in node.inputs.iter().zip(in_grads) {
                let Some(g) = g else { continue };
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                debug_assert_eq!(g.len(), self.nodes[input.0].value.numel());
                match &mut grads[input.0] {
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&g) {
                            *a += *b;
                        }
                    }
                    slot => *slot = Some(g),
                }
            }
        }
        for (i, g) in leaf_grads {
            match &mut self.nodes[i].grad {
                Some(acc) => {
                    for (a, b) in acc.iter_mut().zip(&g) {
                        *a += *b;
                    }
                }
                slot => *slot = Some(g),
            }
        }
        Ok(())
    }

    /// Gradients of every parameter leaf used in this graph.
    pub fn param_grads(&self) -> Grads<S> {
        let len = self.store.map_or(0, |s| s.len());
        let mut out = Grads::empty(len);
        for (&id, &v) in &self.param_vars {
            if let Some(g) = &self.nodes[v.0].grad {
                let shape = self.shape(v).to_vec();
                out.set(id, Tensor::new(shape, g.clone()).expect("grad matches value shape"));
            }
        }
        out
    }
}

fn backward_op<S: Scalar>(
    op: &Op<S>,
    inputs: &[&Tensor<S>],
    out: &Tensor<S>,
    gout: &[S],
) -> Vec<Option<Vec<S>>> {
    match op {
        Op::Leaf => Vec::new(),
        Op::Unary(kind) => vec![Some(elementwise::unary_backward(kind, inputs[0], out, gout))],
        Op::Binary(kind) => {
            let (ga, gb) = elementwise::binary_backward(*kind, inputs[0], inputs[1], out, gout);
            vec![Some(ga), Some(gb)]
        }
        Op::Sum { axis } => vec![Some(reduce::sum_backward(inputs[0], *axis, gout, S::one()))],
        Op::Mean { axis } => {
            let n = match axis {
                Some(a) => inputs[0].shape()[*a],
                None => inputs[0].numel(),
            };
            vec![Some(reduce::sum_backward(inputs[0], *axis, gout, S::one() / S::lit(n as f64)))]
        }
        Op::Reshape => vec![Some(gout.to_vec())],
        Op::Permute { perm } => vec![Some(shape_ops::permute_backward(inputs[0].shape(), perm, gout))],
        Op::Concat { axis } => shape_ops::concat_backward(inputs, *axis, gout).into_iter().map(Some).collect(),
        Op::Narrow { axis, start } => {
            vec![Some(shape_ops::narrow_backward(inputs[0].shape(), *axis, *start, out.shape()[*axis], gout))]
        }
        Op::RepeatInterleave { axis, times } => {
            vec![Some(shape_ops::repeat_backward(inputs[0].shape(), *axis, *times, gout))]
        }
        Op::Gather { indices } => vec![Some(shape_ops::gather_backward(inputs[0].shape(), indices, gout))],
        Op::MatMul { trans_b } => {
            let (ga, gb) = linalg::matmul_backward(inputs[0], inputs[1], *trans_b, gout);
            vec![Some(ga), Some(gb)]
        }
        Op::Conv1d(saved) => linalg::conv1d_backward(saved, inputs, gout),
        Op::DepthwiseConv1d { pad_left } => linalg::depthwise_backward(inputs, out, *pad_left, gout),
        Op::Softmax { axis } => vec![Some(linalg::softmax_backward(out, *axis, gout))],
        Op::LogSoftmax { axis } => vec![Some(linalg::log_softmax_backward(out, *axis, gout))],
        Op::LayerNorm { xhat, inv_std } => linalg::layer_norm_backward(inputs, xhat, inv_std, gout),
        Op::Nll { targets } => vec![Some(reduce::nll_backward(inputs[0], targets, gout))],
        Op::StraightThrough => vec![Some(gout.to_vec()), None],
        Op::Custom(c) => c.backward(inputs, out, gout),
    }
}
