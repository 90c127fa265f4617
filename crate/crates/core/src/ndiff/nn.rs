//! Parameterized layers. Each layer registers its tensors in a
//! [`ParamStore`] under a name prefix and applies them inside a [`Graph`].

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::Result;
use crate::rng::SeededRng;
use crate::scalar::Scalar;

/// Tensor with entries uniform in `[-bound, bound)`.
pub fn uniform<S: Scalar>(shape: &[usize], bound: f64, rng: &mut SeededRng) -> Tensor<S> {
    Tensor::from_fn(shape.to_vec(), |_| S::lit(rng.uniform(-bound, bound)))
}

fn fan_in_bound(fan_in: usize) -> f64 {
    1.0 / (fan_in.max(1) as f64).sqrt()
}

/// `y = x·Wᵀ + b` with `W: [out, in]`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, name: &str, in_dim: usize, out_dim: usize, bias: bool, rng: &mut SeededRng) -> Self {
        let weight = store.add(format!("{name}.weight"), uniform(&[out_dim, in_dim], fan_in_bound(in_dim), rng));
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(vec![out_dim])));
        Linear { weight, bias, in_dim, out_dim }
    }

    /// Same layer with all weights zero.
    pub fn zeros<S: Scalar>(store: &mut ParamStore<S>, name: &str, in_dim: usize, out_dim: usize, bias: bool) -> Self {
        let weight = store.add(format!("{name}.weight"), Tensor::zeros(vec![out_dim, in_dim]));
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(vec![out_dim])));
        Linear { weight, bias, in_dim, out_dim }
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<'_, S>, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = self.bias.map(|b| g.param(b));
        g.linear(x, w, b)
    }
}

/// Dense temporal convolution over `[B, T, C]`.
#[derive(Clone, Copy, Debug)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub kernel: usize,
    pub stride: usize,
    pub pad_left: usize,
    pub pad_right: usize,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: (usize, usize),
        rng: &mut SeededRng,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), uniform(&[cout, cin, kernel], fan_in_bound(cin * kernel), rng));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(vec![cout]));
        Conv1d { weight, bias, kernel, stride, pad_left: pad.0, pad_right: pad.1 }
    }

    /// Stride-1 convolution that preserves length (odd kernels).
    pub fn same<S: Scalar>(store: &mut ParamStore<S>, name: &str, cin: usize, cout: usize, kernel: usize, rng: &mut SeededRng) -> Self {
        let p = kernel / 2;
        Self::new(store, name, cin, cout, kernel, 1, (p, kernel - 1 - p), rng)
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<'_, S>, x: Var) -> Result<Var> {
        let (w, b) = (g.param(self.weight), g.param(self.bias));
        g.conv1d(x, w, Some(b), self.stride, self.pad_left, self.pad_right)
    }
}

/// Causal per-channel convolution (left padding `K − 1`).
#[derive(Clone, Copy, Debug)]
pub struct CausalDepthwise {
    pub weight: ParamId,
    pub bias: ParamId,
    pub kernel: usize,
}

impl CausalDepthwise {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, name: &str, channels: usize, kernel: usize, rng: &mut SeededRng) -> Self {
        let weight = store.add(format!("{name}.weight"), uniform(&[channels, kernel], fan_in_bound(kernel), rng));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(vec![channels]));
        CausalDepthwise { weight, bias, kernel }
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<'_, S>, x: Var) -> Result<Var> {
        let (w, b) = (g.param(self.weight), g.param(self.bias));
        g.depthwise_conv1d(x, w, Some(b), self.kernel - 1)
    }
}

/// Lookup table of `count` rows of width `dim`.
#[derive(Clone, Copy, Debug)]
pub struct Embedding {
    pub table: ParamId,
    pub count: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, name: &str, count: usize, dim: usize, rng: &mut SeededRng) -> Self {
        let table = store.add(format!("{name}.table"), uniform(&[count, dim], 1.0, rng));
        Embedding { table, count, dim }
    }

    /// `[ids.len(), dim]`; out-of-range ids are rejected.
    pub fn forward<S: Scalar>(&self, g: &mut Graph<'_, S>, ids: &[usize]) -> Result<Var> {
        let t = g.param(self.table);
        g.gather_rows(t, ids)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, name: &str, dim: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), Tensor::full(vec![dim], S::one()));
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(vec![dim]));
        LayerNorm { gamma, beta, eps: 1e-5 }
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<'_, S>, x: Var) -> Result<Var> {
        let (ga, be) = (g.param(self.gamma), g.param(self.beta));
        g.layer_norm(x, ga, be, S::lit(self.eps))
    }
}
