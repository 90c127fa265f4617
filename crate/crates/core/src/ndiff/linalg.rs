//! Matrix products, temporal convolutions, softmax and layer normalization.

use super::graph::{Graph, Op, Var};
use super::tensor::Tensor;
use crate::error::{invalid, Error, Result};
use crate::scalar::{gemm, MatLayout, Scalar};

/// Saved state of a dense 1-D convolution for the backward pass.
pub(crate) struct ConvSaved<S> {
    stride: usize,
    pad_left: usize,
    t_out: usize,
    cols: Vec<S>,
    has_bias: bool,
}

/// Output length of a 1-D convolution.
pub fn conv_out_len(t: usize, kernel: usize, stride: usize, pad_left: usize, pad_right: usize) -> Option<usize> {
    let padded = t + pad_left + pad_right;
    if stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

struct MatmulDims {
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    shared_rhs: bool,
}

fn matmul_dims(a: &[usize], b: &[usize], trans_b: bool) -> Option<MatmulDims> {
    if a.len() < 2 || b.len() < 2 {
        return None;
    }
    let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
    let (bk, n) = if trans_b { (b[b.len() - 1], b[b.len() - 2]) } else { (b[b.len() - 2], b[b.len() - 1]) };
    if bk != k {
        return None;
    }
    let batch: usize = a[..a.len() - 2].iter().product();
    let shared_rhs = b.len() == 2;
    if !shared_rhs && a[..a.len() - 2] != b[..b.len() - 2] {
        return None;
    }
    Some(MatmulDims { batch, m, k, n, shared_rhs })
}

fn rhs_layout(offset: usize, k: usize, n: usize, trans_b: bool) -> MatLayout {
    if trans_b {
        MatLayout { offset, row_stride: 1, col_stride: k }
    } else {
        MatLayout::row_major(offset, n)
    }
}

fn transposed(l: MatLayout) -> MatLayout {
    MatLayout { offset: l.offset, row_stride: l.col_stride, col_stride: l.row_stride }
}

pub(super) fn matmul_backward<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, trans_b: bool, gout: &[S]) -> (Vec<S>, Vec<S>) {
    let d = matmul_dims(a.shape(), b.shape(), trans_b).expect("validated in forward");
    let mut ga = vec![S::zero(); a.numel()];
    let mut gb = vec![S::zero(); b.numel()];
    if d.shared_rhs {
        let rows = d.batch * d.m;
        let lb = rhs_layout(0, d.k, d.n, trans_b);
        gemm(rows, d.n, d.k, gout, MatLayout::row_major(0, d.n), b.data(), transposed(lb), &mut ga, MatLayout::row_major(0, d.k), false);
        let la_t = transposed(MatLayout::row_major(0, d.k));
        gemm(d.k, rows, d.n, a.data(), la_t, gout, MatLayout::row_major(0, d.n), &mut gb, lb, false);
    } else {
        for i in 0..d.batch {
            let lb = rhs_layout(i * d.k * d.n, d.k, d.n, trans_b);
            let lg = MatLayout::row_major(i * d.m * d.n, d.n);
            let la = MatLayout::row_major(i * d.m * d.k, d.k);
            gemm(d.m, d.n, d.k, gout, lg, b.data(), transposed(lb), &mut ga, la, false);
            gemm(d.k, d.m, d.n, a.data(), transposed(la), gout, lg, &mut gb, lb, false);
        }
    }
    (ga, gb)
}

pub(super) fn conv1d_backward<S: Scalar>(saved: &ConvSaved<S>, inputs: &[&Tensor<S>], gout: &[S]) -> Vec<Option<Vec<S>>> {
    let (x, w) = (inputs[0], inputs[1]);
    let (b, t, cin) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (cout, kernel) = (w.shape()[0], w.shape()[2]);
    let ck = cin * kernel;
    let rows = b * saved.t_out;
    let mut gw = vec![S::zero(); w.numel()];
    gemm(cout, rows, ck, gout, MatLayout { offset: 0, row_stride: 1, col_stride: cout }, &saved.cols, MatLayout::row_major(0, ck), &mut gw, MatLayout::row_major(0, ck), false);
    let mut gcols = vec![S::zero(); rows * ck];
    gemm(rows, cout, ck, gout, MatLayout::row_major(0, cout), w.data(), MatLayout::row_major(0, ck), &mut gcols, MatLayout::row_major(0, ck), false);
    let mut gx = vec![S::zero(); x.numel()];
    for bi in 0..b {
        for to in 0..saved.t_out {
            let row = &gcols[(bi * saved.t_out + to) * ck..(bi * saved.t_out + to + 1) * ck];
            for k in 0..kernel {
                let ti = (to * saved.stride + k) as isize - saved.pad_left as isize;
                if ti < 0 || ti >= t as isize {
                    continue;
                }
                let base = (bi * t + ti as usize) * cin;
                for ci in 0..cin {
                    gx[base + ci] += row[ci * kernel + k];
                }
            }
        }
    }
    let mut out = vec![Some(gx), Some(gw)];
    if saved.has_bias {
        let mut gb = vec![S::zero(); cout];
        for r in 0..rows {
            for c in 0..cout {
                gb[c] += gout[r * cout + c];
            }
        }
        out.push(Some(gb));
    }
    out
}

pub(super) fn depthwise_backward<S: Scalar>(inputs: &[&Tensor<S>], out: &Tensor<S>, pad_left: usize, gout: &[S]) -> Vec<Option<Vec<S>>> {
    let (x, w) = (inputs[0], inputs[1]);
    let (b, t, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let kernel = w.shape()[1];
    let t_out = out.shape()[1];
    let (xd, wd) = (x.data(), w.data());
    let mut gx = vec![S::zero(); x.numel()];
    let mut gw = vec![S::zero(); w.numel()];
    let mut gb = vec![S::zero(); c];
    for bi in 0..b {
        for to in 0..t_out {
            let go = &gout[(bi * t_out + to) * c..(bi * t_out + to + 1) * c];
            for ch in 0..c {
                gb[ch] += go[ch];
            }
            for k in 0..kernel {
                let ti = (to + k) as isize - pad_left as isize;
                if ti < 0 || ti >= t as isize {
                    continue;
                }
                let base = (bi * t + ti as usize) * c;
                for ch in 0..c {
                    gw[ch * kernel + k] += go[ch] * xd[base + ch];
                    gx[base + ch] += go[ch] * wd[ch * kernel + k];
                }
            }
        }
    }
    let mut res = vec![Some(gx), Some(gw)];
    if inputs.len() > 2 {
        res.push(Some(gb));
    }
    res
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (shape[..axis].iter().product(), shape[axis], shape[axis + 1..].iter().product())
}

pub(super) fn softmax_backward<S: Scalar>(y: &Tensor<S>, axis: usize, gout: &[S]) -> Vec<S> {
    let (outer, len, inner) = axis_split(y.shape(), axis);
    let yd = y.data();
    let mut g = vec![S::zero(); yd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |l: usize| (o * len + l) * inner + i;
            let dot = (0..len).fold(S::zero(), |acc, l| acc + gout[idx(l)] * yd[idx(l)]);
            for l in 0..len {
                g[idx(l)] = yd[idx(l)] * (gout[idx(l)] - dot);
            }
        }
    }
    g
}

pub(super) fn log_softmax_backward<S: Scalar>(y: &Tensor<S>, axis: usize, gout: &[S]) -> Vec<S> {
    let (outer, len, inner) = axis_split(y.shape(), axis);
    let yd = y.data();
    let mut g = vec![S::zero(); yd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |l: usize| (o * len + l) * inner + i;
            let total = (0..len).fold(S::zero(), |acc, l| acc + gout[idx(l)]);
            for l in 0..len {
                g[idx(l)] = gout[idx(l)] - yd[idx(l)].exp() * total;
            }
        }
    }
    g
}

pub(super) fn layer_norm_backward<S: Scalar>(inputs: &[&Tensor<S>], xhat: &[S], inv_std: &[S], gout: &[S]) -> Vec<Option<Vec<S>>> {
    let gamma = inputs[1].data();
    let d = gamma.len();
    let rows = xhat.len() / d;
    let mut gx = vec![S::zero(); xhat.len()];
    let mut gg = vec![S::zero(); d];
    let mut gb = vec![S::zero(); d];
    let dn = S::lit(d as f64);
    for r in 0..rows {
        let xh = &xhat[r * d..(r + 1) * d];
        let go = &gout[r * d..(r + 1) * d];
        let mut sum_dxh = S::zero();
        let mut sum_dxh_xh = S::zero();
        for j in 0..d {
            gg[j] += go[j] * xh[j];
            gb[j] += go[j];
            let dxh = go[j] * gamma[j];
            sum_dxh += dxh;
            sum_dxh_xh += dxh * xh[j];
        }
        for j in 0..d {
            let dxh = go[j] * gamma[j];
            gx[r * d + j] = inv_std[r] / dn * (dn * dxh - sum_dxh - xh[j] * sum_dxh_xh);
        }
    }
    vec![Some(gx), Some(gg), Some(gb)]
}

impl<S: Scalar> Graph<'_, S> {
    /// `a·b` over the last two axes. `b` is either a shared 2-D matrix or
    /// carries the same leading batch axes as `a`. With `trans_b`, `b` is
    /// stored as `[.., n, k]`.
    pub fn matmul_ext(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let d = matmul_dims(&sa, &sb, trans_b).ok_or_else(|| Error::Shape { op: "matmul", lhs: sa.clone(), rhs: sb.clone() })?;
        let mut out = vec![S::zero(); d.batch * d.m * d.n];
        let (ta, tb) = (self.value(a), self.value(b));
        if d.shared_rhs {
            gemm(d.batch * d.m, d.k, d.n, ta.data(), MatLayout::row_major(0, d.k), tb.data(), rhs_layout(0, d.k, d.n, trans_b), &mut out, MatLayout::row_major(0, d.n), false);
        } else {
            for i in 0..d.batch {
                gemm(
                    d.m,
                    d.k,
                    d.n,
                    ta.data(),
                    MatLayout::row_major(i * d.m * d.k, d.k),
                    tb.data(),
                    rhs_layout(i * d.k * d.n, d.k, d.n, trans_b),
                    &mut out,
                    MatLayout::row_major(i * d.m * d.n, d.n),
                    false,
                );
            }
        }
        let mut shape = sa[..sa.len() - 2].to_vec();
        shape.extend([d.m, d.n]);
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, vec![a, b], Op::MatMul { trans_b }))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_ext(a, b, false)
    }

    /// `x·Wᵀ + bias` with `W: [out, in]`, applied over the last axis of `x`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let y = self.matmul_ext(x, weight, true)?;
        match bias {
            Some(b) => self.add(y, b),
            None => Ok(y),
        }
    }

    /// Temporal convolution over channel-last input `[B, T, Cin]` with
    /// `weight: [Cout, Cin, K]`; output `[B, T_out, Cout]`.
    pub fn conv1d(&mut self, x: Var, weight: Var, bias: Option<Var>, stride: usize, pad_left: usize, pad_right: usize) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(weight).to_vec());
        if sx.len() != 3 || sw.len() != 3 || sx[2] != sw[1] {
            return Err(Error::Shape { op: "conv1d", lhs: sx, rhs: sw });
        }
        let (b, t, cin) = (sx[0], sx[1], sx[2]);
        let (cout, kernel) = (sw[0], sw[2]);
        if let Some(bv) = bias {
            if self.shape(bv) != [cout] {
                return Err(Error::Shape { op: "conv1d bias", lhs: self.shape(bv).to_vec(), rhs: vec![cout] });
            }
        }
        let t_out = conv_out_len(t, kernel, stride, pad_left, pad_right)
            .ok_or_else(|| invalid(format!("conv1d: length {t} with padding ({pad_left},{pad_right}) shorter than kernel {kernel}")))?;
        let ck = cin * kernel;
        let mut cols = vec![S::zero(); b * t_out * ck];
        let xd = self.value(x).data();
        for bi in 0..b {
            for to in 0..t_out {
                let row = &mut cols[(bi * t_out + to) * ck..(bi * t_out + to + 1) * ck];
                for k in 0..kernel {
                    let ti = (to * stride + k) as isize - pad_left as isize;
                    if ti < 0 || ti >= t as isize {
                        continue;
                    }
                    let base = (bi * t + ti as usize) * cin;
                    for ci in 0..cin {
                        row[ci * kernel + k] = xd[base + ci];
                    }
                }
            }
        }
        let rows = b * t_out;
        let mut out = vec![S::zero(); rows * cout];
        gemm(rows, ck, cout, &cols, MatLayout::row_major(0, ck), self.value(weight).data(), MatLayout { offset: 0, row_stride: 1, col_stride: ck }, &mut out, MatLayout::row_major(0, cout), false);
        let mut inputs = vec![x, weight];
        if let Some(bv) = bias {
            let bd = self.value(bv).data();
            for r in 0..rows {
                for c in 0..cout {
                    out[r * cout + c] += bd[c];
                }
            }
            inputs.push(bv);
        }
        let value = Tensor::new(vec![b, t_out, cout], out)?;
        let saved = ConvSaved { stride, pad_left, t_out, cols, has_bias: bias.is_some() };
        Ok(self.push(value, inputs, Op::Conv1d(saved)))
    }

    /// Per-channel temporal convolution, stride 1: `x: [B, T, C]`,
    /// `weight: [C, K]`, output length `T + pad_left − K + 1`.
    pub fn depthwise_conv1d(&mut self, x: Var, weight: Var, bias: Option<Var>, pad_left: usize) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(weight).to_vec());
        if sx.len() != 3 || sw.len() != 2 || sx[2] != sw[0] {
            return Err(Error::Shape { op: "depthwise_conv1d", lhs: sx, rhs: sw });
        }
        let (b, t, c) = (sx[0], sx[1], sx[2]);
        let kernel = sw[1];
        let t_out = conv_out_len(t, kernel, 1, pad_left, 0).ok_or_else(|| invalid("depthwise_conv1d: input shorter than kernel"))?;
        let (xd, wd) = (self.value(x).data(), self.value(weight).data());
        let mut out = vec![S::zero(); b * t_out * c];
        if let Some(bv) = bias {
            let bd = self.value(bv).data();
            for r in 0..b * t_out {
                out[r * c..(r + 1) * c].copy_from_slice(bd);
            }
        }
        for bi in 0..b {
            for to in 0..t_out {
                let o = &mut out[(bi * t_out + to) * c..(bi * t_out + to + 1) * c];
                for k in 0..kernel {
                    let ti = (to + k) as isize - pad_left as isize;
                    if ti < 0 || ti >= t as isize {
                        continue;
                    }
                    let base = (bi * t + ti as usize) * c;
                    for ch in 0..c {
                        o[ch] += wd[ch * kernel + k] * xd[base + ch];
                    }
                }
            }
        }
        let value = Tensor::new(vec![b, t_out, c], out)?;
        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        Ok(self.push(value, inputs, Op::DepthwiseConv1d { pad_left }))
    }

    fn softmax_impl(&mut self, x: Var, axis: usize, log: bool) -> Result<Var> {
        self.check_axis(x, axis, "softmax")?;
        let shape = self.shape(x).to_vec();
        let (outer, len, inner) = axis_split(&shape, axis);
        if len == 0 {
            return Err(invalid("softmax over a zero-length axis"));
        }
        let xd = self.value(x).data();
        let mut out = vec![S::zero(); xd.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |l: usize| (o * len + l) * inner + i;
                let max = (0..len).fold(S::neg_infinity(), |m, l| m.max(xd[idx(l)]));
                let total = (0..len).fold(S::zero(), |acc, l| acc + (xd[idx(l)] - max).exp());
                let log_total = total.ln();
                for l in 0..len {
                    let shifted = xd[idx(l)] - max;
                    out[idx(l)] = if log { shifted - log_total } else { shifted.exp() / total };
                }
            }
        }
        let value = Tensor::new(shape, out)?;
        let op = if log { Op::LogSoftmax { axis } } else { Op::Softmax { axis } };
        Ok(self.push(value, vec![x], op))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.softmax_impl(x, axis, false)
    }

    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.softmax_impl(x, axis, true)
    }

    /// Normalization over the last axis with learned gain and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: S) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().ok_or_else(|| invalid("layer_norm of 0-d tensor"))?;
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::Shape { op: "layer_norm", lhs: shape, rhs: self.shape(gamma).to_vec() });
        }
        let (xd, gd, bd) = (self.value(x).data(), self.value(gamma).data(), self.value(beta).data());
        let rows = xd.len() / d.max(1);
        let dn = S::lit(d as f64);
        let mut xhat = vec![S::zero(); xd.len()];
        let mut inv_std = vec![S::zero(); rows];
        let mut out = vec![S::zero(); xd.len()];
        for r in 0..rows {
            let row = &xd[r * d..(r + 1) * d];
            let mean = row.iter().fold(S::zero(), |a, &b| a + b) / dn;
            let var = row.iter().fold(S::zero(), |a, &b| a + (b - mean) * (b - mean)) / dn;
            let is = S::one() / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat[r * d + j] = h;
                out[r * d + j] = gd[j] * h + bd[j];
            }
        }
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, vec![x, gamma, beta], Op::LayerNorm { xhat, inv_std }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn random(shape: &[usize], rng: &mut SeededRng) -> Tensor<f64> {
        Tensor::from_fn(shape.to_vec(), |_| rng.uniform(-1.0, 1.0))
    }

    #[test]
    fn identity_matmul() {
        let mut g = Graph::<f64>::new();
        let mut rng = SeededRng::new(4);
        let eye = g.constant(Tensor::from_fn(vec![3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 }));
        let m = g.constant(random(&[3, 5], &mut rng));
        let p = g.matmul(eye, m).unwrap();
        assert_eq!(g.value(p), g.value(m));
    }

    #[test]
    fn matmul_inner_mismatch() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::zeros(vec![2, 3]));
        let b = g.constant(Tensor::zeros(vec![4, 2]));
        assert!(matches!(g.matmul(a, b), Err(Error::Shape { op: "matmul", .. })));
    }

    #[test]
    fn batched_matmul_matches_loops() {
        let mut rng = SeededRng::new(9);
        let mut g = Graph::<f64>::new();
        let ta = random(&[2, 3, 4], &mut rng);
        let tb = random(&[2, 5, 4], &mut rng);
        let a = g.constant(ta.clone());
        let b = g.constant(tb.clone());
        let c = g.matmul_ext(a, b, true).unwrap();
        let tc = g.value(c);
        for bi in 0..2 {
            for i in 0..3 {
                for j in 0..5 {
                    let want: f64 = (0..4).map(|k| ta.at(&[bi, i, k]) * tb.at(&[bi, j, k])).sum();
                    assert!((tc.at(&[bi, i, j]) - want).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn softmax_symmetric_pair() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(vec![2]));
        let y = g.softmax(x, 0).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_zero_length_rejected() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(vec![3, 0]));
        assert!(g.softmax(x, 1).is_err());
    }

    #[test]
    fn conv_length_formula() {
        assert_eq!(conv_out_len(8, 3, 1, 1, 1), Some(8));
        assert_eq!(conv_out_len(60, 4, 2, 1, 1), Some(30));
        assert_eq!(conv_out_len(2, 5, 1, 0, 0), None);
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(vec![1, 8, 2]));
        let w = g.constant(Tensor::zeros(vec![4, 2, 3]));
        let y = g.conv1d(x, w, None, 1, 1, 1).unwrap();
        assert_eq!(g.shape(y), &[1, 8, 4]);
    }
}
