//! Central-difference gradient checking.

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::Result;
use crate::scalar::Scalar;

/// Evaluates `f` once on constant copies of `inputs`.
fn eval<S: Scalar, F>(f: &F, inputs: &[Tensor<S>]) -> Result<S>
where
    F: Fn(&mut Graph<'_, S>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    Ok(g.value(out).item())
}

/// Central-difference gradient of scalar `f` with respect to every input.
pub fn numeric_grad<S: Scalar, F>(f: F, inputs: &[Tensor<S>], step: S) -> Result<Vec<Vec<S>>>
where
    F: Fn(&mut Graph<'_, S>, &[Var]) -> Result<Var>,
{
    let mut work = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    let two = S::lit(2.0);
    for i in 0..inputs.len() {
        let mut gi = Vec::with_capacity(inputs[i].numel());
        for j in 0..inputs[i].numel() {
            let x0 = inputs[i].data()[j];
            work[i].data_mut()[j] = x0 + step;
            let up = eval(&f, &work)?;
            work[i].data_mut()[j] = x0 - step;
            let down = eval(&f, &work)?;
            work[i].data_mut()[j] = x0;
            gi.push((up - down) / (two * step));
        }
        out.push(gi);
    }
    Ok(out)
}

/// Largest `|analytic − numeric| / max(1, |numeric|)` over all input coordinates.
pub fn grad_check<S: Scalar, F>(f: F, inputs: &[Tensor<S>], step: S) -> Result<S>
where
    F: Fn(&mut Graph<'_, S>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let out = f(&mut g, &vars)?;
    g.backward(out)?;
    let numeric = numeric_grad(&f, inputs, step)?;
    let mut worst = S::zero();
    for (v, num) in vars.iter().zip(&numeric) {
        let zeros;
        let analytic = match g.grad(*v) {
            Some(a) => a,
            None => {
                zeros = vec![S::zero(); num.len()];
                &zeros
            }
        };
        for (a, n) in analytic.iter().zip(num) {
            let err = (*a - *n).abs() / S::one().max(n.abs());
            if err > worst || err.is_nan() {
                worst = err;
            }
        }
    }
    Ok(worst)
}
