//! Selective state-space layer: input-dependent Δ, B, C, diagonal decay A,
//! discretization, the sequential scan and the gated block around it.

use crate::error::{invalid, Error, Result};
use crate::ndiff::nn::{CausalDepthwise, Linear};
use crate::ndiff::{phi1, CustomOp, Graph, ParamId, ParamStore, Tensor, Var};
use crate::rng::SeededRng;
use crate::scalar::Scalar;

/// How continuous `(A, B)` become `(Ā, B̄)` over a step Δ.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Discretization {
    /// `Ā = exp(ΔA)`, `B̄ = Δ·B`.
    #[default]
    Euler,
    /// Zero-order hold: `B̄ = (ΔA)⁻¹(exp(ΔA) − 1)·Δ·B`.
    ExactZoh,
}

/// Parameters of one gated selective-SSM block.
#[derive(Clone, Copy, Debug)]
pub struct SsmParams {
    pub d_model: usize,
    pub inner: usize,
    pub state: usize,
    pub in_x: Linear,
    pub in_z: Linear,
    pub conv: CausalDepthwise,
    pub proj_delta: Linear,
    pub delta_bias: ParamId,
    pub proj_b: Linear,
    pub proj_c: Linear,
    pub a_log: ParamId,
    pub proj_out: Linear,
}

pub const CONV_KERNEL: usize = 4;

impl SsmParams {
    /// `d_model → inner` projections with an `inner × state` diagonal state.
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, name: &str, d_model: usize, inner: usize, state: usize, rng: &mut SeededRng) -> Self {
        let in_x = Linear::new(store, &format!("{name}.in_x"), d_model, inner, true, rng);
        let in_z = Linear::new(store, &format!("{name}.in_z"), d_model, inner, true, rng);
        let conv = CausalDepthwise::new(store, &format!("{name}.conv"), inner, CONV_KERNEL, rng);
        let proj_delta = Linear::new(store, &format!("{name}.proj_delta"), inner, inner, false, rng);
        // Step sizes start log-uniform in [1e-3, 1e-1]; store softplus⁻¹ of them.
        let delta_bias = store.add(
            format!("{name}.delta_bias"),
            Tensor::from_fn(vec![inner], |_| {
                let dt = (rng.uniform(1e-3f64.ln(), 1e-1f64.ln())).exp();
                S::lit(dt.exp_m1().ln())
            }),
        );
        let proj_b = Linear::new(store, &format!("{name}.proj_b"), inner, state, false, rng);
        let proj_c = Linear::new(store, &format!("{name}.proj_c"), inner, state, false, rng);
        let a_log = store.add(
            format!("{name}.a_log"),
            Tensor::from_fn(vec![inner, state], |i| S::lit((((i % state) + 1) as f64).ln())),
        );
        let proj_out = Linear::new(store, &format!("{name}.proj_out"), inner, d_model, true, rng);
        SsmParams { d_model, inner, state, in_x, in_z, conv, proj_delta, delta_bias, proj_b, proj_c, a_log, proj_out }
    }

    /// Sets the output projection to zero so the block starts as identity.
    pub fn zero_output<S: Scalar>(&self, store: &mut ParamStore<S>) {
        store.get_mut(self.proj_out.weight).data_mut().fill(S::zero());
        if let Some(b) = self.proj_out.bias {
            store.get_mut(b).data_mut().fill(S::zero());
        }
    }

    /// `A = −exp(A_log)`, shape `[E, N]`.
    pub fn a_matrix<S: Scalar>(&self, g: &mut Graph<'_, S>) -> Var {
        let al = g.param(self.a_log);
        let e = g.exp(al);
        g.neg(e)
    }
}

/// `Δ = softplus(proj_Δ(x) + bias)`, `B = proj_B(x)`, `C = proj_C(x)`.
pub fn select_parameters<S: Scalar>(g: &mut Graph<'_, S>, x: Var, p: &SsmParams) -> Result<(Var, Var, Var)> {
    let pre = p.proj_delta.forward(g, x)?;
    let bias = g.param(p.delta_bias);
    let pre = g.add(pre, bias)?;
    let delta = g.softplus(pre);
    let b = p.proj_b.forward(g, x)?;
    let c = p.proj_c.forward(g, x)?;
    Ok((delta, b, c))
}

/// Broadcasts `Δ: [B, M, E]`, diagonal `A: [E, N]` and `B: [B, M, N]` to
/// `(Ā, B̄)`, both `[B, M, E, N]`. Rejects any `Δ ≤ 0`.
pub fn discretize<S: Scalar>(g: &mut Graph<'_, S>, delta: Var, a: Var, bmat: Var, mode: Discretization) -> Result<(Var, Var)> {
    let ds = g.shape(delta).to_vec();
    let (as_, bs) = (g.shape(a).to_vec(), g.shape(bmat).to_vec());
    if ds.len() != 3 || as_.len() != 2 || bs.len() != 3 || as_[0] != ds[2] || bs[..2] != ds[..2] || bs[2] != as_[1] {
        return Err(Error::Shape { op: "discretize", lhs: ds, rhs: as_ });
    }
    if let Some(bad) = g.value(delta).data().iter().find(|d| !(**d > S::zero())) {
        return Err(invalid(format!("discretize: step Δ must be positive, got {bad}")));
    }
    let (bn, m, e, n) = (ds[0], ds[1], ds[2], as_[1]);
    let d4 = g.reshape(delta, &[bn, m, e, 1])?;
    let da = g.mul(d4, a)?;
    let abar = g.exp(da);
    let b4 = g.reshape(bmat, &[bn, m, 1, n])?;
    let db = g.mul(d4, b4)?;
    let bbar = match mode {
        Discretization::Euler => db,
        Discretization::ExactZoh => {
            let f = g.phi1(da);
            g.mul(f, db)?
        }
    };
    Ok((abar, bbar))
}

/// Extents of a scan: batch, length, channels, state size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScanDims {
    pub batch: usize,
    pub len: usize,
    pub channels: usize,
    pub state: usize,
}

/// Sequential recurrence on raw buffers. `abar`, `bbar`: `[B, M, E, N]`;
/// `c`: `[B, M, N]`; `x`: `[B, M, E]`. Returns `y: [B, M, E]` and, when
/// `keep_states`, every `h_t`.
pub fn scan_values<S: Scalar>(d: ScanDims, abar: &[S], bbar: &[S], c: &[S], x: &[S], keep_states: bool) -> (Vec<S>, Vec<S>) {
    let ScanDims { batch, len, channels: e, state: n } = d;
    let mut y = vec![S::zero(); batch * len * e];
    let mut states = if keep_states { vec![S::zero(); batch * len * e * n] } else { Vec::new() };
    let mut h = vec![S::zero(); e * n];
    for b in 0..batch {
        h.fill(S::zero());
        for t in 0..len {
            let bt = b * len + t;
            let ab = &abar[bt * e * n..(bt + 1) * e * n];
            let bb = &bbar[bt * e * n..(bt + 1) * e * n];
            let ct = &c[bt * n..(bt + 1) * n];
            let xt = &x[bt * e..(bt + 1) * e];
            let yt = &mut y[bt * e..(bt + 1) * e];
            for ei in 0..e {
                let mut acc = S::zero();
                for ni in 0..n {
                    let k = ei * n + ni;
                    h[k] = ab[k] * h[k] + bb[k] * xt[ei];
                    acc += ct[ni] * h[k];
                }
                yt[ei] = acc;
            }
            if keep_states {
                states[bt * e * n..(bt + 1) * e * n].copy_from_slice(&h);
            }
        }
    }
    (y, states)
}

/// Euler-discretized selective scan computed step by step without
/// materializing `Ā`/`B̄`. Inference only.
pub fn selective_scan<S: Scalar>(d: ScanDims, delta: &[S], a: &[S], bmat: &[S], c: &[S], x: &[S]) -> Vec<S> {
    let ScanDims { batch, len, channels: e, state: n } = d;
    let mut y = vec![S::zero(); batch * len * e];
    let mut h = vec![S::zero(); e * n];
    for b in 0..batch {
        h.fill(S::zero());
        for t in 0..len {
            let bt = b * len + t;
            let dt = &delta[bt * e..(bt + 1) * e];
            let bt_ = &bmat[bt * n..(bt + 1) * n];
            let ct = &c[bt * n..(bt + 1) * n];
            let xt = &x[bt * e..(bt + 1) * e];
            for ei in 0..e {
                let dx = dt[ei] * xt[ei];
                let mut acc = S::zero();
                for ni in 0..n {
                    let k = ei * n + ni;
                    h[k] = (dt[ei] * a[k]).exp() * h[k] + bt_[ni] * dx;
                    acc += ct[ni] * h[k];
                }
                y[bt * e + ei] = acc;
            }
        }
    }
    y
}

struct ScanOp<S> {
    dims: ScanDims,
    states: Vec<S>,
}

impl<S: Scalar> CustomOp<S> for ScanOp<S> {
    fn name(&self) -> &'static str {
        "selective_scan"
    }

    fn backward(&self, inputs: &[&Tensor<S>], _output: &Tensor<S>, gy: &[S]) -> Vec<Option<Vec<S>>> {
        let ScanDims { batch, len, channels: e, state: n } = self.dims;
        let (abar, bbar, c, x) = (inputs[0].data(), inputs[1].data(), inputs[2].data(), inputs[3].data());
        let hs = &self.states;
        let mut ga = vec![S::zero(); abar.len()];
        let mut gb = vec![S::zero(); bbar.len()];
        let mut gc = vec![S::zero(); c.len()];
        let mut gx = vec![S::zero(); x.len()];
        let mut carry = vec![S::zero(); e * n];
        for b in 0..batch {
            carry.fill(S::zero());
            for t in (0..len).rev() {
                let bt = b * len + t;
                let base = bt * e * n;
                for ei in 0..e {
                    let dy = gy[bt * e + ei];
                    let xv = x[bt * e + ei];
                    let mut dxv = S::zero();
                    for ni in 0..n {
                        let k = ei * n + ni;
                        let h = hs[base + k];
                        gc[bt * n + ni] += dy * h;
                        let dh = carry[k] + dy * c[bt * n + ni];
                        if t > 0 {
                            ga[base + k] = dh * hs[base - e * n + k];
                        }
                        gb[base + k] = dh * xv;
                        dxv += dh * bbar[base + k];
                        carry[k] = dh * abar[base + k];
                    }
                    gx[bt * e + ei] = dxv;
                }
            }
        }
        vec![Some(ga), Some(gb), Some(gc), Some(gx)]
    }
}

/// `h_t = Ā_t ⊙ h_{t−1} + B̄_t x_t` from `h_{−1} = 0`, `y_t = Σ_n C_t[n] h_t[·, n]`.
pub fn scan<S: Scalar>(g: &mut Graph<'_, S>, abar: Var, bbar: Var, c: Var, x: Var) -> Result<Var> {
    let xs = g.shape(x).to_vec();
    let as_ = g.shape(abar).to_vec();
    if xs.len() != 3 || as_.len() != 4 || as_[..3] != xs[..] || g.shape(bbar) != as_.as_slice() {
        return Err(Error::Shape { op: "scan", lhs: as_, rhs: xs });
    }
    let dims = ScanDims { batch: xs[0], len: xs[1], channels: xs[2], state: as_[3] };
    if g.shape(c) != [dims.batch, dims.len, dims.state] {
        return Err(Error::Shape { op: "scan", lhs: g.shape(c).to_vec(), rhs: vec![dims.batch, dims.len, dims.state] });
    }
    let keep = [abar, bbar, c, x].iter().any(|v| g.requires_grad(*v));
    let (y, states) = scan_values(dims, g.value(abar).data(), g.value(bbar).data(), g.value(c).data(), g.value(x).data(), keep);
    let out = Tensor::new(xs, y)?;
    Ok(g.custom(&[abar, bbar, c, x], out, Box::new(ScanOp { dims, states })))
}

/// The gated path of the block: `scan(...) ⊙ silu(z)`, shape `[B, M, E]`.
pub fn gated_scan<S: Scalar>(g: &mut Graph<'_, S>, tokens: Var, p: &SsmParams, mode: Discretization) -> Result<Var> {
    let xin = p.in_x.forward(g, tokens)?;
    let xc = p.conv.forward(g, xin)?;
    let x = g.silu(xc);
    let z = p.in_z.forward(g, tokens)?;
    let (delta, b, c) = select_parameters(g, x, p)?;
    let a = p.a_matrix(g);
    let (abar, bbar) = discretize(g, delta, a, b, mode)?;
    let y = scan(g, abar, bbar, c, x)?;
    let gate = g.silu(z);
    g.mul(y, gate)
}

/// Full block: `proj_out(scan ⊙ silu(z)) + tokens`, same shape as `tokens`.
pub fn mamba_block<S: Scalar>(g: &mut Graph<'_, S>, tokens: Var, p: &SsmParams, mode: Discretization) -> Result<Var> {
    let gated = gated_scan(g, tokens, p, mode)?;
    let out = p.proj_out.forward(g, gated)?;
    g.add(out, tokens)
}

/// Inference-only `A` values, for the fused scan.
pub fn a_values<S: Scalar>(store: &ParamStore<S>, p: &SsmParams) -> Vec<S> {
    store.get(p.a_log).data().iter().map(|v| -v.exp()).collect()
}

/// Reference discretization on scalars (used by tests and the bench).
pub fn discretize_scalar<S: Scalar>(delta: S, a: S, b: S, mode: Discretization) -> (S, S) {
    let da = delta * a;
    let abar = da.exp();
    let bbar = match mode {
        Discretization::Euler => delta * b,
        Discretization::ExactZoh => phi1(da) * delta * b,
    };
    (abar, bbar)
}

/// Tensor with entries uniform in `[lo, hi)`.
pub fn random_tensor<S: Scalar>(shape: &[usize], lo: f64, hi: f64, rng: &mut SeededRng) -> Tensor<S> {
    Tensor::from_fn(shape.to_vec(), |_| S::lit(rng.uniform(lo, hi)))
}
