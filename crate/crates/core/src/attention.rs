//! Multi-head scaled dot-product attention without positional encoding.

use crate::error::{invalid, Error, Result};
use crate::ndiff::nn::Linear;
use crate::ndiff::{Graph, ParamStore, Var};
use crate::rng::SeededRng;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionConfig {
    pub dim: usize,
    pub heads: usize,
}

impl AttentionConfig {
    pub fn new(dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(invalid(format!("attention: model dim {dim} not divisible by {heads} heads")));
        }
        Ok(AttentionConfig { dim, heads })
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }
}

impl Default for AttentionConfig {
    fn default() -> Self {
        AttentionConfig { dim: 64, heads: 4 }
    }
}

/// Query/key/value/output projections of one attention block.
#[derive(Clone, Copy, Debug)]
pub struct Attention {
    pub cfg: AttentionConfig,
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
}

/// Attention output together with its weights `[B, h, Mq, Mk]`.
pub struct AttentionOutput {
    pub out: Var,
    pub weights: Var,
}

impl Attention {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, name: &str, cfg: AttentionConfig, rng: &mut SeededRng) -> Self {
        let d = cfg.dim;
        Attention {
            cfg,
            wq: Linear::new(store, &format!("{name}.wq"), d, d, true, rng),
            wk: Linear::new(store, &format!("{name}.wk"), d, d, true, rng),
            wv: Linear::new(store, &format!("{name}.wv"), d, d, true, rng),
            wo: Linear::new(store, &format!("{name}.wo"), d, d, true, rng),
        }
    }

    /// `[B, M, D] → [B·h, M, D/h]`.
    fn split_heads<S: Scalar>(&self, g: &mut Graph<'_, S>, x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        let (h, dh) = (self.cfg.heads, self.cfg.head_dim());
        let r = g.reshape(x, &[s[0], s[1], h, dh])?;
        let p = g.permute(r, &[0, 2, 1, 3])?;
        g.reshape(p, &[s[0] * h, s[1], dh])
    }

    /// Queries from `q`, keys and values from `kv`; the residual adds `q`.
    pub fn cross<S: Scalar>(&self, g: &mut Graph<'_, S>, q: Var, kv: Var) -> Result<AttentionOutput> {
        let (qs, ks) = (g.shape(q).to_vec(), g.shape(kv).to_vec());
        if qs.len() != 3 || ks.len() != 3 || qs[0] != ks[0] || qs[2] != self.cfg.dim || ks[2] != self.cfg.dim {
            return Err(Error::Shape { op: "attention", lhs: qs, rhs: ks });
        }
        let (b, mq, mk) = (qs[0], qs[1], ks[1]);
        let (h, dh) = (self.cfg.heads, self.cfg.head_dim());
        let qp = self.wq.forward(g, q)?;
        let kp = self.wk.forward(g, kv)?;
        let vp = self.wv.forward(g, kv)?;
        let qh = self.split_heads(g, qp)?;
        let kh = self.split_heads(g, kp)?;
        let vh = self.split_heads(g, vp)?;
        let raw = g.matmul_ext(qh, kh, true)?;
        let scores = g.scale(raw, S::one() / S::lit(dh as f64).sqrt());
        let w = g.softmax(scores, 2)?;
        let o = g.matmul(w, vh)?;
        let o = g.reshape(o, &[b, h, mq, dh])?;
        let o = g.permute(o, &[0, 2, 1, 3])?;
        let o = g.reshape(o, &[b, mq, self.cfg.dim])?;
        let proj = self.wo.forward(g, o)?;
        let out = g.add(proj, q)?;
        let weights = g.reshape(w, &[b, h, mq, mk])?;
        Ok(AttentionOutput { out, weights })
    }

    pub fn mhsa<S: Scalar>(&self, g: &mut Graph<'_, S>, x: Var) -> Result<Var> {
        Ok(self.cross(g, x, x)?.out)
    }

    pub fn mhca<S: Scalar>(&self, g: &mut Graph<'_, S>, q: Var, kv: Var) -> Result<Var> {
        Ok(self.cross(g, q, kv)?.out)
    }
}

/// Attention-only forward over raw buffers (`x: [M, D]`, single head,
/// identity projections), blocked over queries so memory stays `O(M)`.
/// Used as the quadratic baseline in the latency benchmark.
pub fn attention_forward_blocked<S: Scalar>(x: &[S], len: usize, dim: usize, block: usize) -> Vec<S> {
    use crate::scalar::{gemm, MatLayout};
    let block = block.max(1);
    let scale = S::one() / S::lit(dim as f64).sqrt();
    let mut out = vec![S::zero(); len * dim];
    let mut scores = vec![S::zero(); block * len];
    let mut start = 0;
    while start < len {
        let rows = block.min(len - start);
        let sc = &mut scores[..rows * len];
        gemm(rows, dim, len, x, MatLayout::row_major(start * dim, dim), x, MatLayout { offset: 0, row_stride: 1, col_stride: dim }, sc, MatLayout::row_major(0, len), false);
        for row in sc.chunks_mut(len) {
            let max = row.iter().fold(S::neg_infinity(), |m, &v| m.max(v * scale));
            let mut total = S::zero();
            for v in row.iter_mut() {
                *v = (*v * scale - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        gemm(rows, len, dim, sc, MatLayout::row_major(0, len), x, MatLayout::row_major(0, dim), &mut out, MatLayout::row_major(start * dim, dim), false);
        start += rows;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndiff::Tensor;

    #[test]
    fn dim_must_divide() {
        assert!(AttentionConfig::new(10, 4).is_err());
        assert_eq!(AttentionConfig::new(64, 4).unwrap().head_dim(), 16);
    }

    #[test]
    fn identical_tokens_uniform_weights() {
        let mut store = ParamStore::<f64>::new();
        let att = Attention::new(&mut store, "a", AttentionConfig::new(8, 2).unwrap(), &mut SeededRng::new(3));
        let mut g = Graph::inference(&store);
        let row: Vec<f64> = (0..8).map(|i| i as f64 * 0.1).collect();
        let x = g.constant(Tensor::from_fn(vec![1, 5, 8], |i| row[i % 8]));
        let o = att.cross(&mut g, x, x).unwrap();
        assert!(g.value(o.weights).data().iter().all(|w| (w - 0.2).abs() < 1e-15));
    }

    #[test]
    fn blocked_baseline_rows_are_convex() {
        let mut rng = SeededRng::new(1);
        let x: Vec<f64> = (0..7 * 3).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let y = attention_forward_blocked(&x, 7, 3, 2);
        for d in 0..3 {
            let col: Vec<f64> = (0..7).map(|t| x[t * 3 + d]).collect();
            let (lo, hi) = col.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
            assert!((0..7).all(|t| y[t * 3 + d] >= lo - 1e-12 && y[t * 3 + d] <= hi + 1e-12));
        }
    }
}
