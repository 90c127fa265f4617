//! Pointwise unary ops and broadcasting binary ops.

use super::graph::{Graph, Op, Var};
use super::tensor::{broadcast_offsets, broadcast_shape, numel, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug)]
pub enum UnaryKind<S> {
    Neg,
    Exp,
    Log,
    Silu,
    Softplus,
    Sigmoid,
    Tanh,
    Relu,
    Abs,
    Square,
    Sqrt,
    Acos,
    /// `(e^u − 1) / u`, continuous at 0.
    Phi1,
    Scale(S),
    AddScalar(S),
    Clamp(S, S),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

pub fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus<S: Scalar>(x: S) -> S {
    x.max(S::zero()) + (-x.abs()).exp().ln_1p()
}

const PHI_SERIES_RADIUS: f64 = 1e-2;

/// `(e^u − 1)/u` with its series near zero.
pub fn phi1<S: Scalar>(u: S) -> S {
    if u.abs().as_f64() < PHI_SERIES_RADIUS {
        // sum_{k>=0} u^k / (k+1)!
        let mut term = S::one();
        let mut acc = S::one();
        for k in 1..10 {
            term = term * u / S::lit((k + 1) as f64);
            acc += term;
        }
        acc
    } else {
        u.exp_m1() / u
    }
}

fn phi1_derivative<S: Scalar>(u: S) -> S {
    if u.abs().as_f64() < PHI_SERIES_RADIUS {
        // sum_{k>=1} k u^{k-1} / (k+1)!
        let mut acc = S::zero();
        let mut pow = S::one();
        let mut fact = S::one();
        for k in 1..10 {
            fact = fact * S::lit((k + 1) as f64);
            acc += S::lit(k as f64) * pow / fact;
            pow = pow * u;
        }
        acc
    } else {
        let e = u.exp();
        (u * e - e + S::one()) / (u * u)
    }
}

fn unary_forward<S: Scalar>(kind: &UnaryKind<S>, x: S) -> S {
    match *kind {
        UnaryKind::Neg => -x,
        UnaryKind::Exp => x.exp(),
        UnaryKind::Log => x.ln(),
        UnaryKind::Silu => x * sigmoid(x),
        UnaryKind::Softplus => softplus(x),
        UnaryKind::Sigmoid => sigmoid(x),
        UnaryKind::Tanh => x.tanh(),
        UnaryKind::Relu => x.max(S::zero()),
        UnaryKind::Abs => x.abs(),
        UnaryKind::Square => x * x,
        UnaryKind::Sqrt => x.sqrt(),
        UnaryKind::Acos => x.acos(),
        UnaryKind::Phi1 => phi1(x),
        UnaryKind::Scale(c) => x * c,
        UnaryKind::AddScalar(c) => x + c,
        UnaryKind::Clamp(lo, hi) => x.max(lo).min(hi),
    }
}

pub(super) fn unary_backward<S: Scalar>(kind: &UnaryKind<S>, x: &Tensor<S>, y: &Tensor<S>, gout: &[S]) -> Vec<S> {
    let one = S::one();
    let two = S::lit(2.0);
    x.data()
        .iter()
        .zip(y.data())
        .zip(gout)
        .map(|((&x, &y), &g)| {
            let d = match *kind {
                UnaryKind::Neg => -one,
                UnaryKind::Exp => y,
                UnaryKind::Log => one / x,
                UnaryKind::Silu => {
                    let s = sigmoid(x);
                    s * (one + x * (one - s))
                }
                UnaryKind::Softplus => sigmoid(x),
                UnaryKind::Sigmoid => y * (one - y),
                UnaryKind::Tanh => one - y * y,
                UnaryKind::Relu => {
                    if x > S::zero() {
                        one
                    } else {
                        S::zero()
                    }
                }
                UnaryKind::Abs => {
                    if x > S::zero() {
                        one
                    } else if x < S::zero() {
                        -one
                    } else {
                        S::zero()
                    }
                }
                UnaryKind::Square => two * x,
                UnaryKind::Sqrt => one / (two * y),
                UnaryKind::Acos => -one / (one - x * x).sqrt(),
                UnaryKind::Phi1 => phi1_derivative(x),
                UnaryKind::Scale(c) => c,
                UnaryKind::AddScalar(_) => one,
                UnaryKind::Clamp(lo, hi) => {
                    if x >= lo && x <= hi {
                        one
                    } else {
                        S::zero()
                    }
                }
            };
            g * d
        })
        .collect()
}

fn apply_binary<S: Scalar>(kind: BinaryKind, a: S, b: S) -> S {
    match kind {
        BinaryKind::Add => a + b,
        BinaryKind::Sub => a - b,
        BinaryKind::Mul => a * b,
        BinaryKind::Div => a / b,
    }
}

pub(super) fn binary_backward<S: Scalar>(
    kind: BinaryKind,
    a: &Tensor<S>,
    b: &Tensor<S>,
    out: &Tensor<S>,
    gout: &[S],
) -> (Vec<S>, Vec<S>) {
    let mut ga = vec![S::zero(); a.numel()];
    let mut gb = vec![S::zero(); b.numel()];
    let (ad, bd) = (a.data(), b.data());
    let mut body = |oa: usize, ob: usize, g: S| match kind {
        BinaryKind::Add => {
            ga[oa] += g;
            gb[ob] += g;
        }
        BinaryKind::Sub => {
            ga[oa] += g;
            gb[ob] -= g;
        }
        BinaryKind::Mul => {
            ga[oa] += g * bd[ob];
            gb[ob] += g * ad[oa];
        }
        BinaryKind::Div => {
            ga[oa] += g / bd[ob];
            gb[ob] -= g * ad[oa] / (bd[ob] * bd[ob]);
        }
    };
    if a.shape() == b.shape() {
        for (i, &g) in gout.iter().enumerate() {
            body(i, i, g);
        }
    } else {
        let oa = broadcast_offsets(a.shape(), out.shape());
        let ob = broadcast_offsets(b.shape(), out.shape());
        for (i, &g) in gout.iter().enumerate() {
            body(oa[i], ob[i], g);
        }
    }
    (ga, gb)
}

impl<S: Scalar> Graph<'_, S> {
    pub fn unary(&mut self, kind: UnaryKind<S>, x: Var) -> Var {
        let value = self.value(x).map(|v| unary_forward(&kind, v));
        self.push(value, vec![x], Op::Unary(kind))
    }

    pub fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let value = if ta.shape() == tb.shape() {
            let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| apply_binary(kind, x, y)).collect();
            Tensor::new(ta.shape().to_vec(), data)?
        } else {
            let out_shape = broadcast_shape(ta.shape(), tb.shape()).ok_or_else(|| Error::Shape {
                op: "broadcast",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            })?;
            let oa = broadcast_offsets(ta.shape(), &out_shape);
            let ob = broadcast_offsets(tb.shape(), &out_shape);
            let (ad, bd) = (ta.data(), tb.data());
            let data = (0..numel(&out_shape)).map(|i| apply_binary(kind, ad[oa[i]], bd[ob[i]])).collect();
            Tensor::new(out_shape, data)?
        };
        Ok(self.push(value, vec![a, b], Op::Binary(kind)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Div, a, b)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Neg, x)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Exp, x)
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Log, x)
    }

    pub fn silu(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Silu, x)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Softplus, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Sigmoid, x)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Tanh, x)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Relu, x)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Abs, x)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Square, x)
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Sqrt, x)
    }

    pub fn acos(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Acos, x)
    }

    pub fn phi1(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Phi1, x)
    }

    pub fn scale(&mut self, x: Var, c: S) -> Var {
        self.unary(UnaryKind::Scale(c), x)
    }

    pub fn add_scalar(&mut self, x: Var, c: S) -> Var {
        self.unary(UnaryKind::AddScalar(c), x)
    }

    pub fn clamp(&mut self, x: Var, lo: S, hi: S) -> Var {
        self.unary(UnaryKind::Clamp(lo, hi), x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_zero_is_ln2() {
        assert!((softplus(0.0f64) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((softplus(800.0f64) - 800.0).abs() < 1e-12);
        assert!(softplus(-800.0f64) >= 0.0);
    }

    #[test]
    fn silu_zero() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::scalar(0.0));
        let y = g.silu(x);
        assert_eq!(g.value(y).item(), 0.0);
    }

    #[test]
    fn exp_values_and_grad() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::from_f64(vec![2], &[0.0, 1.0]).unwrap(), true);
        let y = g.exp(x);
        assert_eq!(g.value(y).data(), &[1.0, std::f64::consts::E]);
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0, std::f64::consts::E]);
    }

    #[test]
    fn phi1_continuous_across_series_switch() {
        for &u in &[-0.0101, -0.0099, 0.0099, 0.0101, 1e-9, -0.5, 2.0] {
            let direct: f64 = if u == 0.0 { 1.0 } else { (u as f64).exp_m1() / u };
            assert!((phi1(u) - direct).abs() < 1e-12, "u={u}");
        }
        assert_eq!(phi1(0.0f64), 1.0);
        let h = 1e-6;
        for &u in &[-0.0101f64, 0.005, 0.3] {
            let fd = (phi1(u + h) - phi1(u - h)) / (2.0 * h);
            assert!((phi1_derivative(u) - fd).abs() < 1e-8, "u={u}");
        }
    }

    #[test]
    fn broadcast_mismatch_reports_shapes() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::zeros(vec![2, 3]));
        let b = g.constant(Tensor::zeros(vec![2]));
        match g.add(a, b) {
            Err(Error::Shape { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2]);
            }
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn broadcast_grad_reduces() {
        let mut g = Graph::<f64>::new();
        let a = g.leaf(Tensor::from_f64(vec![2, 3], &[1., 2., 3., 4., 5., 6.]).unwrap(), true);
        let b = g.leaf(Tensor::from_f64(vec![3], &[1., 1., 1.]).unwrap(), true);
        let c = g.mul(a, b).unwrap();
        let s = g.sum(c);
        g.backward(s).unwrap();
        assert_eq!(g.grad(b).unwrap(), &[5., 7., 9.]);
    }
}
