//! Per-part vector-quantized autoencoder: strided conv encoder, nearest-code
//! quantizer, upsampling conv decoder and the composite training loss.

use std::path::Path;

use super::layout::{MotionSequence, Part};
use crate::checkpoint;
use crate::config::KeyValues;
use super::rotation::geodesic_graph;
use crate::error::{invalid, Error, Result};
use crate::ndiff::nn::{uniform, Conv1d};
use crate::ndiff::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::rng::SeededRng;

/// Frames per latent step.
pub const DOWNSAMPLE: usize = 4;
pub const VQ_MAGIC: [u8; 4] = *b"MTVQ";

#[derive(Clone, Debug, PartialEq)]
pub struct VqConfig {
    pub codebook_size: usize,
    pub code_dim: usize,
    pub hidden: usize,
    /// Include the velocity and acceleration terms in the loss.
    pub vel_acc: bool,
}

impl Default for VqConfig {
    fn default() -> Self {
        VqConfig { codebook_size: 64, code_dim: 32, hidden: 64, vel_acc: true }
    }
}

/// Loss terms of one forward pass, as plain numbers.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct VqTerms {
    /// Geodesic on rotations (body) or MSE (face).
    pub rec: f64,
    /// L1 on root translation.
    pub translation: f64,
    /// MSE on foot-contact labels.
    pub contact: f64,
    pub vel: f64,
    pub acc: f64,
    pub codebook: f64,
    pub commit: f64,
    pub total: f64,
}

impl VqTerms {
    /// Everything that compares motion to its reconstruction.
    pub fn recon(&self) -> f64 {
        self.rec + self.translation + self.contact
    }
}

/// Nearest codebook row for each latent row (`[.., C]` against `[N, C]`),
/// ties to the lowest index. Returns the quantized tensor and indices.
pub fn quantize(latent: &Tensor<f64>, codebook: &Tensor<f64>) -> Result<(Tensor<f64>, Vec<usize>)> {
    let c = *latent.shape().last().ok_or_else(|| invalid("quantize: 0-d latent"))?;
    if codebook.ndim() != 2 || codebook.shape()[1] != c {
        return Err(Error::Shape { op: "quantize", lhs: latent.shape().to_vec(), rhs: codebook.shape().to_vec() });
    }
    let cb = codebook.data();
    let n = codebook.shape()[0];
    let mut idx = Vec::with_capacity(latent.numel() / c.max(1));
    let mut out = Vec::with_capacity(latent.numel());
    for row in latent.data().chunks(c) {
        let mut best = (f64::INFINITY, 0);
        for k in 0..n {
            let d: f64 = row.iter().zip(&cb[k * c..(k + 1) * c]).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best.0 {
                best = (d, k);
            }
        }
        idx.push(best.1);
        out.extend_from_slice(&cb[best.1 * c..(best.1 + 1) * c]);
    }
    Ok((Tensor::new(latent.shape().to_vec(), out)?, idx))
}

/// Autoencoder and codebook for one body part; owns its parameters.
#[derive(Clone, Debug)]
pub struct VqModel {
    pub part: Part,
    pub cfg: VqConfig,
    pub store: ParamStore<f64>,
    pub codebook: ParamId,
    mean: ParamId,
    std: ParamId,
    enc: [Conv1d; 4],
    dec: [Conv1d; 4],
}

/// Tensors produced by one training forward pass.
pub struct VqForward {
    pub loss: Var,
    pub terms: VqTerms,
    pub indices: Vec<usize>,
    pub z_hat: Var,
    pub z_st: Var,
    pub recon: Var,
}

impl VqModel {
    pub fn new(part: Part, cfg: VqConfig, seed: u64) -> Self {
        let mut rng = SeededRng::new(seed ^ (0x5151 + part.tag() as u64));
        let mut store = ParamStore::new();
        let d = part.dim();
        let (h, c, n) = (cfg.hidden, cfg.code_dim, cfg.codebook_size);
        let p = part.name();
        let mean = store.add(format!("{p}.norm_mean"), Tensor::zeros(vec![d]));
        let std = store.add(format!("{p}.norm_std"), Tensor::full(vec![d], 1.0));
        store.set_frozen(mean, true);
        store.set_frozen(std, true);
        let enc = [
            Conv1d::same(&mut store, &format!("{p}.enc0"), d, h, 3, &mut rng),
            Conv1d::new(&mut store, &format!("{p}.enc1"), h, h, 4, 2, (1, 1), &mut rng),
            Conv1d::new(&mut store, &format!("{p}.enc2"), h, h, 4, 2, (1, 1), &mut rng),
            Conv1d::same(&mut store, &format!("{p}.enc3"), h, c, 3, &mut rng),
        ];
        let dec = [
            Conv1d::same(&mut store, &format!("{p}.dec0"), c, h, 3, &mut rng),
            Conv1d::same(&mut store, &format!("{p}.dec1"), h, h, 3, &mut rng),
            Conv1d::same(&mut store, &format!("{p}.dec2"), h, h, 3, &mut rng),
            Conv1d::same(&mut store, &format!("{p}.dec3"), h, d, 3, &mut rng),
        ];
        let bound = 1.0 / n as f64;
        let codebook = store.add(format!("{p}.codebook"), uniform(&[n, c], bound, &mut rng));
        VqModel { part, cfg, store, codebook, mean, std, enc, dec }
    }

    /// Per-channel mean and standard deviation used to whiten inputs.
    pub fn set_normalization(&mut self, mean: &[f64], std: &[f64]) -> Result<()> {
        let d = self.part.dim();
        if mean.len() != d || std.len() != d {
            return Err(invalid(format!("normalization for {} needs {d} channels", self.part)));
        }
        self.store.get_mut(self.mean).data_mut().copy_from_slice(mean);
        self.store.get_mut(self.std).data_mut().copy_from_slice(std);
        Ok(())
    }

    /// Fits the normalization to part slices of training clips.
    pub fn fit_normalization(&mut self, clips: &[MotionSequence]) -> Result<()> {
        let d = self.part.dim();
        let (mut s, mut s2, mut n) = (vec![0.0; d], vec![0.0; d], 0usize);
        for c in clips {
            if c.dim != d {
                return Err(invalid(format!("expected {} slices of {d} channels, got {}", self.part, c.dim)));
            }
            for f in c.frames.chunks(d) {
                for k in 0..d {
                    s[k] += f[k];
                    s2[k] += f[k] * f[k];
                }
            }
            n += c.len;
        }
        if n == 0 {
            return Err(Error::Data("no frames to fit normalization".into()));
        }
        let mean: Vec<f64> = s.iter().map(|v| v / n as f64).collect();
        let std: Vec<f64> = s2.iter().zip(&mean).map(|(v, m)| (v / n as f64 - m * m).max(0.0).sqrt().max(1e-2)).collect();
        self.set_normalization(&mean, &std)
    }

    pub fn codebook_values(&self) -> &Tensor<f64> {
        self.store.get(self.codebook)
    }

    /// `[B, T, D] → [B, T/4, C]`.
    pub fn encode(&self, g: &mut Graph<'_, f64>, x: Var) -> Result<Var> {
        let t = g.shape(x).get(1).copied().unwrap_or(0);
        if t == 0 || t % DOWNSAMPLE != 0 {
            let pad = (DOWNSAMPLE - t % DOWNSAMPLE) % DOWNSAMPLE;
            return Err(invalid(format!("encode: {t} frames not divisible by {DOWNSAMPLE}; pad by {pad} frames")));
        }
        let (m, s) = (g.param(self.mean), g.param(self.std));
        let xc = g.sub(x, m)?;
        let mut h = g.div(xc, s)?;
        for (i, conv) in self.enc.iter().enumerate() {
            h = conv.forward(g, h)?;
            if i < 3 {
                h = g.silu(h);
            }
        }
        Ok(h)
    }

    /// `[B, T', C] → [B, 4T', D]`.
    pub fn decode(&self, g: &mut Graph<'_, f64>, z: Var) -> Result<Var> {
        let mut h = self.dec[0].forward(g, z)?;
        h = g.silu(h);
        for conv in &self.dec[1..3] {
            h = g.repeat_interleave(h, 1, 2)?;
            h = conv.forward(g, h)?;
            h = g.silu(h);
        }
        let out = self.dec[3].forward(g, h)?;
        let (m, s) = (g.param(self.mean), g.param(self.std));
        let scaled = g.mul(out, s)?;
        g.add(scaled, m)
    }

    /// Nearest-code lookup inside a graph; the result carries gradient to the
    /// codebook rows that were selected.
    pub fn lookup(&self, g: &mut Graph<'_, f64>, z_hat: Var) -> Result<(Var, Vec<usize>)> {
        let shape = g.shape(z_hat).to_vec();
        let (_, idx) = quantize(g.value(z_hat), self.codebook_values())?;
        let cb = g.param(self.codebook);
        let rows = g.gather_rows(cb, &idx)?;
        Ok((g.reshape(rows, &shape)?, idx))
    }

    /// Encode, quantize with the straight-through estimator, decode and score.
    pub fn forward(&self, g: &mut Graph<'_, f64>, x: Var) -> Result<VqForward> {
        let z_hat = self.encode(g, x)?;
        let (z_q, indices) = self.lookup(g, z_hat)?;
        let z_st = g.straight_through(z_hat, z_q)?;
        let recon = self.decode(g, z_st)?;
        let (loss, terms) = vq_loss(g, self.part, x, recon, z_hat, z_q, self.cfg.vel_acc)?;
        Ok(VqForward { loss, terms, indices, z_hat, z_st, recon })
    }

    /// Latents and code indices of a `[B, T, D]` batch, no gradients.
    pub fn tokenize(&self, x: &Tensor<f64>) -> Result<(Tensor<f64>, Tensor<f64>, Vec<usize>)> {
        let mut g = Graph::inference(&self.store);
        let xv = g.constant(x.clone());
        let z = self.encode(&mut g, xv)?;
        let z_hat = g.value(z).clone();
        let (z_q, idx) = quantize(&z_hat, self.codebook_values())?;
        Ok((z_hat, z_q, idx))
    }

    /// Decodes `[B, T', C]` latents to `[B, 4T', D]` frames.
    pub fn decode_tensor(&self, z: &Tensor<f64>) -> Result<Tensor<f64>> {
        let mut g = Graph::inference(&self.store);
        let zv = g.constant(z.clone());
        let out = self.decode(&mut g, zv)?;
        Ok(g.value(out).clone())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut meta = KeyValues::new();
        meta.set("part", self.part);
        meta.set("codebook_size", self.cfg.codebook_size);
        meta.set("code_dim", self.cfg.code_dim);
        meta.set("hidden", self.cfg.hidden);
        meta.set("vel_acc", self.cfg.vel_acc);
        checkpoint::write(path, VQ_MAGIC, &meta, &self.store)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck = checkpoint::read(path, VQ_MAGIC)?;
        let bad = |e: Error| Error::Checkpoint(format!("{}: {e}", path.display()));
        let m = &ck.meta;
        let part: Part = m.get_str("part").ok_or_else(|| Error::Checkpoint("missing part".into()))?.parse().map_err(bad)?;
        let need = |k: &str| -> Result<usize> { m.get(k).map_err(bad)?.ok_or_else(|| Error::Checkpoint(format!("missing {k}"))) };
        let cfg = VqConfig {
            codebook_size: need("codebook_size")?,
            code_dim: need("code_dim")?,
            hidden: need("hidden")?,
            vel_acc: m.get("vel_acc").map_err(bad)?.unwrap_or(true),
        };
        let mut model = VqModel::new(part, cfg, 0);
        model.store.load_named(&ck.tensors)?;
        Ok(model)
    }

    /// Quantize-then-decode reconstruction of a part slice.
    pub fn reconstruct(&self, m: &MotionSequence) -> Result<MotionSequence> {
        let x = Tensor::new(vec![1, m.len, m.dim], m.frames.clone())?;
        let (_, zq, _) = self.tokenize(&x)?;
        let out = self.decode_tensor(&zq)?;
        MotionSequence::new(out.into_data(), m.len, m.dim, m.fps)
    }
}

fn time_diff(g: &mut Graph<'_, f64>, x: Var) -> Result<Var> {
    let t = g.shape(x)[1];
    let a = g.narrow(x, 1, 1, t - 1)?;
    let b = g.narrow(x, 1, 0, t - 1)?;
    g.sub(a, b)
}

/// Composite stage-1 loss over `[B, T, D]` motion and `[B, T', C]` latents.
///
/// Body parts: geodesic on Rot6D joints, L1 on translation, MSE on contacts,
/// L1 on velocity and acceleration. Face: MSE for all three. Both add
/// `mean((sg(ẑ) − z_q)²) + mean((ẑ − sg(z_q))²)`.
pub fn vq_loss(g: &mut Graph<'_, f64>, part: Part, m: Var, m_hat: Var, z_hat: Var, z_q: Var, vel_acc: bool) -> Result<(Var, VqTerms)> {
    let shape = g.shape(m).to_vec();
    if shape.len() != 3 || g.shape(m_hat) != shape.as_slice() || shape[2] != part.dim() {
        return Err(Error::Shape { op: "vq_loss", lhs: shape, rhs: g.shape(m_hat).to_vec() });
    }
    let (b, t, d) = (shape[0], shape[1], shape[2]);
    if t < 3 {
        return Err(invalid(format!("vq_loss needs at least 3 frames for acceleration, got {t}")));
    }
    let mut parts: Vec<Var> = Vec::new();
    let mut terms = VqTerms::default();
    let body = part != Part::Face;
    if body {
        let rc = part.rot_channels();
        let r = g.narrow(m, 2, 0, rc)?;
        let rh = g.narrow(m_hat, 2, 0, rc)?;
        let r = g.reshape(r, &[b * t * rc / 6, 6])?;
        let rh = g.reshape(rh, &[b * t * rc / 6, 6])?;
        let geo = geodesic_graph(g, rh, r)?;
        terms.rec = g.value(geo).item();
        parts.push(geo);
        if let Some(cr) = part.contact_range() {
            let c = g.narrow(m, 2, cr.start, cr.len())?;
            let ch = g.narrow(m_hat, 2, cr.start, cr.len())?;
            let l = g.mse(ch, c)?;
            terms.contact = g.value(l).item();
            parts.push(l);
        }
        if let Some(tr) = part.translation_range() {
            let c = g.narrow(m, 2, tr.start, tr.len())?;
            let ch = g.narrow(m_hat, 2, tr.start, tr.len())?;
            let l = g.l1(ch, c)?;
            terms.translation = g.value(l).item();
            parts.push(l);
        }
    } else {
        let l = g.mse(m_hat, m)?;
        terms.rec = g.value(l).item();
        parts.push(l);
    }
    debug_assert_eq!(d, part.dim());
    if vel_acc {
        let v = time_diff(g, m)?;
        let vh = time_diff(g, m_hat)?;
        let a = time_diff(g, v)?;
        let ah = time_diff(g, vh)?;
        let (lv, la) = if body { (g.l1(vh, v)?, g.l1(ah, a)?) } else { (g.mse(vh, v)?, g.mse(ah, a)?) };
        terms.vel = g.value(lv).item();
        terms.acc = g.value(la).item();
        parts.push(lv);
        parts.push(la);
    }
    let zs = g.detach(z_hat);
    let cb = g.mse(zs, z_q)?;
    let qs = g.detach(z_q);
    let cm = g.mse(z_hat, qs)?;
    terms.codebook = g.value(cb).item();
    terms.commit = g.value(cm).item();
    parts.push(cb);
    parts.push(cm);
    let mut total = parts[0];
    for &p in &parts[1..] {
        total = g.add(total, p)?;
    }
    terms.total = g.value(total).item();
    Ok((total, terms))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_entry_and_ties() {
        let cb = Tensor::from_fn(vec![10, 2], |i| (i / 2) as f64 * if i % 2 == 0 { 1.0 } else { -1.0 });
        let z = Tensor::new(vec![1, 2], vec![7.0, -7.0]).unwrap();
        let (q, idx) = quantize(&z, &cb).unwrap();
        assert_eq!(idx, vec![7]);
        assert_eq!(q.data(), &[7.0, -7.0]);
        // Entries 3 and 9 equidistant from the query.
        let cb = Tensor::from_fn(vec![10, 1], |i| match i {
            3 => 1.0,
            9 => 3.0,
            _ => 100.0,
        });
        let (_, idx) = quantize(&Tensor::new(vec![1, 1], vec![2.0]).unwrap(), &cb).unwrap();
        assert_eq!(idx, vec![3]);
    }

    #[test]
    fn length_contract() {
        let m = VqModel::new(Part::Upper, VqConfig::default(), 1);
        let mut g = Graph::inference(&m.store);
        let x = g.constant(Tensor::zeros(vec![2, 32, 78]));
        let z = m.encode(&mut g, x).unwrap();
        assert_eq!(g.shape(z), &[2, 8, 32]);
        let y = m.decode(&mut g, z).unwrap();
        assert_eq!(g.shape(y), &[2, 32, 78]);
        let bad = g.constant(Tensor::zeros(vec![1, 30, 78]));
        let err = m.encode(&mut g, bad).unwrap_err().to_string();
        assert!(err.contains("pad by 2"), "{err}");
    }

    #[test]
    fn codebook_init_range() {
        let m = VqModel::new(Part::Face, VqConfig::default(), 2);
        let b = 1.0 / 64.0;
        assert!(m.codebook_values().data().iter().all(|&v| (-b..b).contains(&v)));
    }
}
