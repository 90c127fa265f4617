//! Reductions and the scalar losses built on them.

use super::graph::{Graph, Op, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn sum_axis<S: Scalar>(x: &Tensor<S>, axis: usize) -> Tensor<S> {
    let (outer, len, inner) = split_axis(x.shape(), axis);
    let mut out = vec![S::zero(); outer * inner];
    let d = x.data();
    for o in 0..outer {
        for l in 0..len {
            let base = (o * len + l) * inner;
            for i in 0..inner {
                out[o * inner + i] += d[base + i];
            }
        }
    }
    let mut shape = x.shape().to_vec();
    shape.remove(axis);
    Tensor::new(shape, out).expect("reduced shape")
}

pub(super) fn sum_backward<S: Scalar>(x: &Tensor<S>, axis: Option<usize>, gout: &[S], factor: S) -> Vec<S> {
    match axis {
        None => vec![gout[0] * factor; x.numel()],
        Some(axis) => {
            let (outer, len, inner) = split_axis(x.shape(), axis);
            let mut g = vec![S::zero(); x.numel()];
            for o in 0..outer {
                for l in 0..len {
                    let base = (o * len + l) * inner;
                    for i in 0..inner {
                        g[base + i] = gout[o * inner + i] * factor;
                    }
                }
            }
            g
        }
    }
}

pub(super) fn nll_backward<S: Scalar>(logp: &Tensor<S>, targets: &[usize], gout: &[S]) -> Vec<S> {
    let classes = *logp.shape().last().expect("nll input has a class axis");
    let mut g = vec![S::zero(); logp.numel()];
    let scale = -gout[0] / S::lit(targets.len() as f64);
    for (r, &t) in targets.iter().enumerate() {
        g[r * classes + t] = scale;
    }
    g
}

impl<S: Scalar> Graph<'_, S> {
    /// Sum of all elements (0-d result).
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().fold(S::zero(), |a, &b| a + b);
        self.push(Tensor::scalar(s), vec![x], Op::Sum { axis: None })
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().fold(S::zero(), |a, &b| a + b) / S::lit(t.numel() as f64);
        self.push(Tensor::scalar(s), vec![x], Op::Mean { axis: None })
    }

    /// Sum over one axis, removing it.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis(x, axis, "sum_axis")?;
        let value = sum_axis(self.value(x), axis);
        Ok(self.push(value, vec![x], Op::Sum { axis: Some(axis) }))
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis(x, axis, "mean_axis")?;
        let n = S::lit(self.shape(x)[axis] as f64);
        let value = sum_axis(self.value(x), axis).map(|v| v / n);
        Ok(self.push(value, vec![x], Op::Mean { axis: Some(axis) }))
    }

    pub(crate) fn check_axis(&self, x: Var, axis: usize, op: &'static str) -> Result<()> {
        if axis >= self.shape(x).len() {
            return Err(Error::Shape { op, lhs: self.shape(x).to_vec(), rhs: vec![axis] });
        }
        Ok(())
    }

    fn check_same(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape { op, lhs: self.shape(a).to_vec(), rhs: self.shape(b).to_vec() });
        }
        Ok(())
    }

    /// Mean squared error.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.check_same(pred, target, "mse")?;
        let d = self.sub(pred, target)?;
        let sq = self.square(d);
        Ok(self.mean(sq))
    }

    /// Mean absolute error.
    pub fn l1(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.check_same(pred, target, "l1")?;
        let d = self.sub(pred, target)?;
        let a = self.abs(d);
        Ok(self.mean(a))
    }

    /// Mean negative log-likelihood of `targets` under row-wise log-probabilities
    /// (last axis = classes, leading axes flattened into rows).
    pub fn nll(&mut self, logp: Var, targets: &[usize]) -> Result<Var> {
        let t = self.value(logp);
        let classes = *t.shape().last().ok_or_else(|| Error::Shape {
            op: "nll",
            lhs: vec![],
            rhs: vec![targets.len()],
        })?;
        let rows = t.numel() / classes.max(1);
        if rows != targets.len() {
            return Err(Error::Shape { op: "nll", lhs: t.shape().to_vec(), rhs: vec![targets.len()] });
        }
        let mut acc = S::zero();
        for (r, &c) in targets.iter().enumerate() {
            if c >= classes {
                return Err(Error::ClassIndex { index: c, classes });
            }
            acc += t.data()[r * classes + c];
        }
        let value = -acc / S::lit(rows as f64);
        Ok(self.push(Tensor::scalar(value), vec![logp], Op::Nll { targets: targets.to_vec() }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_of_identical_is_zero() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_f64(vec![3], &[1.0, -2.0, 0.5]).unwrap());
        let l = g.mse(x, x).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
    }

    #[test]
    fn l1_example() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::from_f64(vec![2], &[1.0, 2.0]).unwrap());
        let b = g.constant(Tensor::zeros(vec![2]));
        let l = g.l1(a, b).unwrap();
        assert_eq!(g.value(l).item(), 1.5);
    }

    #[test]
    fn nll_uniform_256() {
        let mut g = Graph::<f64>::new();
        let lp = (1.0f64 / 256.0).ln();
        let x = g.constant(Tensor::full(vec![4, 256], lp));
        let l = g.nll(x, &[0, 17, 255, 3]).unwrap();
        assert!((g.value(l).item() - 256f64.ln()).abs() < 1e-12);
        assert!((g.value(l).item() - 5.5452).abs() < 1e-4);
    }

    #[test]
    fn nll_rejects_bad_class() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(vec![1, 4]));
        assert!(matches!(g.nll(x, &[4]), Err(Error::ClassIndex { index: 4, classes: 4 })));
    }

    #[test]
    fn axis_reductions() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::from_f64(vec![2, 3], &[1., 2., 3., 4., 5., 6.]).unwrap(), true);
        let s = g.sum_axis(x, 0).unwrap();
        assert_eq!(g.value(s).data(), &[5., 7., 9.]);
        let m = g.mean_axis(x, 1).unwrap();
        assert_eq!(g.value(m).data(), &[2., 5.]);
        let t = g.sum(m);
        g.backward(t).unwrap();
        let third = 1.0 / 3.0;
        assert_eq!(g.grad(x).unwrap(), &[third; 6]);
    }
}
