//! Reshaping, permutation, concatenation, slicing and row gathers.

use super::graph::{Graph, Op, Var};
use super::tensor::{numel, strides, Tensor};
use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;

fn permute_data<S: Scalar>(shape: &[usize], perm: &[usize], data: &[S]) -> (Vec<usize>, Vec<S>) {
    let src_st = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let st: Vec<usize> = perm.iter().map(|&p| src_st[p]).collect();
    let n = out_shape.len();
    let mut out = Vec::with_capacity(data.len());
    let mut idx = vec![0usize; n];
    let mut off = 0usize;
    for _ in 0..data.len() {
        out.push(data[off]);
        for d in (0..n).rev() {
            idx[d] += 1;
            off += st[d];
            if idx[d] < out_shape[d] {
                break;
            }
            off -= st[d] * idx[d];
            idx[d] = 0;
        }
    }
    (out_shape, out)
}

pub(super) fn permute_backward<S: Scalar>(in_shape: &[usize], perm: &[usize], gout: &[S]) -> Vec<S> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    permute_data(&out_shape, &inv, gout).1
}

pub(super) fn concat_backward<S: Scalar>(inputs: &[&Tensor<S>], axis: usize, gout: &[S]) -> Vec<Vec<S>> {
    let shape0 = inputs[0].shape();
    let outer: usize = shape0[..axis].iter().product();
    let inner: usize = shape0[axis + 1..].iter().product();
    let total: usize = inputs.iter().map(|t| t.shape()[axis]).sum();
    let mut offset = 0;
    inputs
        .iter()
        .map(|t| {
            let len = t.shape()[axis];
            let mut g = Vec::with_capacity(t.numel());
            for o in 0..outer {
                let start = (o * total + offset) * inner;
                g.extend_from_slice(&gout[start..start + len * inner]);
            }
            offset += len;
            g
        })
        .collect()
}

pub(super) fn narrow_backward<S: Scalar>(in_shape: &[usize], axis: usize, start: usize, len: usize, gout: &[S]) -> Vec<S> {
    let outer: usize = in_shape[..axis].iter().product();
    let inner: usize = in_shape[axis + 1..].iter().product();
    let full = in_shape[axis];
    let mut g = vec![S::zero(); numel(in_shape)];
    for o in 0..outer {
        let dst = (o * full + start) * inner;
        let src = o * len * inner;
        g[dst..dst + len * inner].copy_from_slice(&gout[src..src + len * inner]);
    }
    g
}

pub(super) fn repeat_backward<S: Scalar>(in_shape: &[usize], axis: usize, times: usize, gout: &[S]) -> Vec<S> {
    let outer: usize = in_shape[..axis].iter().product();
    let inner: usize = in_shape[axis + 1..].iter().product();
    let len = in_shape[axis];
    let mut g = vec![S::zero(); numel(in_shape)];
    for o in 0..outer {
        for l in 0..len {
            for r in 0..times {
                let src = ((o * len + l) * times + r) * inner;
                let dst = (o * len + l) * inner;
                for i in 0..inner {
                    g[dst + i] += gout[src + i];
                }
            }
        }
    }
    g
}

pub(super) fn gather_backward<S: Scalar>(table_shape: &[usize], indices: &[usize], gout: &[S]) -> Vec<S> {
    let row: usize = table_shape[1..].iter().product();
    let mut g = vec![S::zero(); numel(table_shape)];
    for (k, &r) in indices.iter().enumerate() {
        for i in 0..row {
            g[r * row + i] += gout[k * row + i];
        }
    }
    g
}

impl<S: Scalar> Graph<'_, S> {
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape.to_vec())?;
        Ok(self.push(value, vec![x], Op::Reshape))
    }

    /// General axis permutation: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::Shape { op: "permute", lhs: shape, rhs: perm.to_vec() });
        }
        let (out_shape, data) = permute_data(&shape, perm, self.value(x).data());
        let value = Tensor::new(out_shape, data)?;
        Ok(self.push(value, vec![x], Op::Permute { perm: perm.to_vec() }))
    }

    /// Swaps two axes.
    pub fn transpose(&mut self, x: Var, a: usize, b: usize) -> Result<Var> {
        let mut perm: Vec<usize> = (0..self.shape(x).len()).collect();
        if a >= perm.len() || b >= perm.len() {
            return Err(Error::Shape { op: "transpose", lhs: self.shape(x).to_vec(), rhs: vec![a, b] });
        }
        perm.swap(a, b);
        self.permute(x, &perm)
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs.first().ok_or_else(|| invalid("concat of zero tensors"))?;
        let shape0 = self.shape(*first).to_vec();
        if axis >= shape0.len() {
            return Err(Error::Shape { op: "concat", lhs: shape0, rhs: vec![axis] });
        }
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            let compatible = s.len() == shape0.len()
                && s.iter().zip(&shape0).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::Shape { op: "concat", lhs: shape0, rhs: s.to_vec() });
            }
            total += s[axis];
        }
        let outer: usize = shape0[..axis].iter().product();
        let inner: usize = shape0[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &x in xs {
                let t = self.value(x);
                let len = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * len..(o + 1) * len]);
            }
        }
        let mut shape = shape0;
        shape[axis] = total;
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, xs.to_vec(), Op::Concat { axis }))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::Shape { op: "narrow", lhs: shape, rhs: vec![axis, start, len] });
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let full = shape[axis];
        let d = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let s = (o * full + start) * inner;
            data.extend_from_slice(&d[s..s + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let value = Tensor::new(out_shape, data)?;
        Ok(self.push(value, vec![x], Op::Narrow { axis, start }))
    }

    /// Nearest-neighbour upsampling: each slice along `axis` repeated `times`.
    pub fn repeat_interleave(&mut self, x: Var, axis: usize, times: usize) -> Result<Var> {
        self.check_axis(x, axis, "repeat_interleave")?;
        let shape = self.shape(x).to_vec();
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let len = shape[axis];
        let d = self.value(x).data();
        let mut data = Vec::with_capacity(d.len() * times);
        for o in 0..outer {
            for l in 0..len {
                let s = (o * len + l) * inner;
                for _ in 0..times {
                    data.extend_from_slice(&d[s..s + inner]);
                }
            }
        }
        let mut out_shape = shape;
        out_shape[axis] *= times;
        let value = Tensor::new(out_shape, data)?;
        Ok(self.push(value, vec![x], Op::RepeatInterleave { axis, times }))
    }

    /// Rows of `table` (first axis) selected by `indices`.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let shape = self.shape(table).to_vec();
        let rows = *shape.first().ok_or_else(|| invalid("gather from 0-d tensor"))?;
        let row: usize = shape[1..].iter().product();
        let d = self.value(table).data();
        let mut data = Vec::with_capacity(indices.len() * row);
        for &i in indices {
            if i >= rows {
                return Err(Error::ClassIndex { index: i, classes: rows });
            }
            data.extend_from_slice(&d[i * row..(i + 1) * row]);
        }
        let mut out_shape = shape;
        out_shape[0] = indices.len();
        let value = Tensor::new(out_shape, data)?;
        Ok(self.push(value, vec![table], Op::Gather { indices: indices.to_vec() }))
    }

    /// Value of `quantized` forward, gradient copied to `latent` unchanged and
    /// none to `quantized` (the straight-through estimator).
    pub fn straight_through(&mut self, latent: Var, quantized: Var) -> Result<Var> {
        if self.shape(latent) != self.shape(quantized) {
            return Err(Error::Shape {
                op: "straight_through",
                lhs: self.shape(latent).to_vec(),
                rhs: self.shape(quantized).to_vec(),
            });
        }
        let value = self.value(quantized).clone();
        Ok(self.push(value, vec![latent, quantized], Op::StraightThrough))
    }
}
