//! Adam with global gradient-norm clipping.

use super::params::{Grads, ParamStore};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global-norm threshold; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 2.5e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, clip_norm: Some(0.99) }
    }
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<S: Scalar>(grads: &mut Grads<S>, max_norm: S) -> S {
    let norm = grads.global_norm();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

/// First and second moment state, one slot per parameter.
#[derive(Clone, Debug)]
pub struct Adam<S> {
    pub config: AdamConfig,
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
    t: u64,
}

impl<S: Scalar> Adam<S> {
    pub fn new(config: AdamConfig) -> Self {
        Adam { config, m: Vec::new(), v: Vec::new(), t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// One update of every non-frozen parameter that has a gradient.
    /// Returns the global gradient norm before clipping.
    pub fn step(&mut self, store: &mut ParamStore<S>, grads: &mut Grads<S>) -> S {
        let norm = match self.config.clip_norm {
            Some(c) => clip_global_norm(grads, S::lit(c)),
            None => grads.global_norm(),
        };
        if self.m.len() < store.len() {
            self.m.resize(store.len(), Vec::new());
            self.v.resize(store.len(), Vec::new());
        }
        self.t += 1;
        let c = self.config;
        let (b1, b2) = (S::lit(c.beta1), S::lit(c.beta2));
        let bc1 = S::one() - S::lit(c.beta1.powi(self.t as i32));
        let bc2 = S::one() - S::lit(c.beta2.powi(self.t as i32));
        let (lr, eps) = (S::lit(c.lr), S::lit(c.eps));
        for id in store.ids().collect::<Vec<_>>() {
            if store.is_frozen(id) {
                continue;
            }
            let Some(g) = grads.get(id) else { continue };
            let i = id.index();
            let n = g.numel();
            if self.m[i].len() != n {
                self.m[i] = vec![S::zero(); n];
                self.v[i] = vec![S::zero(); n];
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let p = store.get_mut(id).data_mut();
            for (j, &gj) in g.data().iter().enumerate() {
                m[j] = b1 * m[j] + (S::one() - b1) * gj;
                v[j] = b2 * v[j] + (S::one() - b2) * gj * gj;
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                p[j] -= lr * mh / (vh.sqrt() + eps);
            }
        }
        norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndiff::Tensor;

    #[test]
    fn clips_to_threshold() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("w", Tensor::zeros(vec![2]));
        let mut grads = Grads::<f64>::empty(1);
        // 3-4-5 triangle scaled to norm 9.9
        grads.set(id, Tensor::new(vec![2], vec![5.94, 7.92]).unwrap());
        let before = clip_global_norm(&mut grads, 0.99);
        assert!((before - 9.9).abs() < 1e-12);
        assert!((grads.global_norm() - 0.99).abs() < 1e-12);
    }

    #[test]
    fn zero_grads_leave_params() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("w", Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap());
        let mut grads = Grads::empty(1);
        grads.set(id, Tensor::zeros(vec![3]));
        let mut opt = Adam::new(AdamConfig::default());
        opt.step(&mut store, &mut grads);
        assert_eq!(store.get(id).data(), &[1.0, -2.0, 0.5]);
    }

    #[test]
    fn hand_computed_second_step() {
        let cfg = AdamConfig { lr: 0.1, beta1: 0.9, beta2: 0.999, eps: 1e-8, clip_norm: None };
        let mut store = ParamStore::<f64>::new();
        let id = store.add("w", Tensor::scalar(1.0));
        let mut opt = Adam::new(cfg);
        let (g1, g2) = (0.5, -0.2);
        for g in [g1, g2] {
            let mut grads = Grads::empty(1);
            grads.set(id, Tensor::scalar(g));
            opt.step(&mut store, &mut grads);
        }
        let m1 = 0.1 * g1;
        let v1 = 0.001 * g1 * g1;
        let p1 = 1.0 - 0.1 * (m1 / 0.1) / ((v1 / 0.001f64).sqrt() + 1e-8);
        let m2 = 0.9 * m1 + 0.1 * g2;
        let v2 = 0.999 * v1 + 0.001 * g2 * g2;
        let mh = m2 / (1.0 - 0.81);
        let vh = v2 / (1.0 - 0.999f64 * 0.999);
        let p2 = p1 - 0.1 * mh / (vh.sqrt() + 1e-8);
        assert!((store.get(id).item() - p2).abs() < 1e-12);
    }

    #[test]
    fn frozen_untouched() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("w", Tensor::scalar(1.0));
        store.set_frozen(id, true);
        let mut grads = Grads::empty(1);
        grads.set(id, Tensor::scalar(3.0));
        Adam::new(AdamConfig::default()).step(&mut store, &mut grads);
        assert_eq!(store.get(id).item(), 1.0);
    }
}
