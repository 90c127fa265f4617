//! Speech feature stand-ins: a fixed amplitude envelope, a learnable
//! strided convolution over raw samples, and a token embedding.

use crate::corpus::Audio;
use crate::error::{invalid, Error, Result};
use crate::metrics::beats::ONSET_FLOOR;
use crate::ndiff::nn::{Conv1d, Embedding, Linear};
use crate::ndiff::{Graph, ParamStore, Tensor, Var};
use crate::rng::SeededRng;

/// Envelope channels: RMS, normalized log RMS, rectified log-RMS rise.
pub const ENVELOPE_CHANNELS: usize = 3;
/// Raw-audio convolution: kernel and stride in samples.
pub const RAW_KERNEL: usize = 320;
pub const RAW_STRIDE: usize = 160;

/// Samples covered by `frames` motion frames.
pub fn frame_span(frames: usize, rate: u32, fps: u32) -> usize {
    (frames as f64 * rate as f64 / fps as f64).round() as usize
}

fn check_span(audio: &Audio, frames: usize, fps: u32) -> Result<usize> {
    let span = frame_span(frames, audio.rate, fps);
    if frames == 0 || audio.samples.len() < span {
        return Err(Error::Data(format!(
            "audio has {} samples, {frames} frames at {fps} fps need {span}",
            audio.samples.len()
        )));
    }
    Ok(span)
}

/// `[frames, 3]` envelope over each frame's window of samples.
pub fn envelope_features(audio: &Audio, frames: usize, fps: u32) -> Result<Tensor<f64>> {
    check_span(audio, frames, fps)?;
    let spf = audio.rate as f64 / fps as f64;
    let norm = (1.0 + 1.0 / ONSET_FLOOR).ln();
    let mut out = Vec::with_capacity(frames * ENVELOPE_CHANNELS);
    let mut prev_log = 0.0;
    for i in 0..frames {
        let lo = (i as f64 * spf).round() as usize;
        let hi = (((i + 1) as f64 * spf).round() as usize).max(lo + 1).min(audio.samples.len());
        let w = &audio.samples[lo..hi];
        let rms = (w.iter().map(|&v| f64::from(v).powi(2)).sum::<f64>() / w.len() as f64).sqrt();
        let log = (1.0 + rms / ONSET_FLOOR).ln() / norm;
        let rise = if i == 0 { 0.0 } else { (log - prev_log).max(0.0) };
        prev_log = log;
        out.extend([rms, log, rise]);
    }
    Tensor::new(vec![frames, ENVELOPE_CHANNELS], out)
}

/// Raw samples covering `frames`, as `[span]` f64.
pub fn raw_samples(audio: &Audio, frames: usize, fps: u32) -> Result<Vec<f64>> {
    let span = check_span(audio, frames, fps)?;
    if span < RAW_KERNEL {
        return Err(Error::Data(format!("audio span of {span} samples is shorter than the {RAW_KERNEL}-sample kernel")));
    }
    Ok(audio.samples[..span].iter().map(|&v| f64::from(v)).collect())
}

/// Linear-interpolation matrix `[src, dst]` mapping conv frames (centred at
/// `(j·stride + kernel/2)/rate`) onto motion frame centres.
pub fn resample_matrix(src: usize, dst: usize, rate: u32, fps: u32) -> Tensor<f64> {
    let mut m = vec![0.0; src * dst];
    for i in 0..dst {
        let t = (i as f64 + 0.5) / fps as f64;
        let pos = (t * rate as f64 - RAW_KERNEL as f64 / 2.0) / RAW_STRIDE as f64;
        let pos = pos.clamp(0.0, (src - 1) as f64);
        let j = (pos.floor() as usize).min(src - 1);
        let frac = pos - j as f64;
        m[j * dst + i] += 1.0 - frac;
        if frac > 0.0 {
            m[(j + 1) * dst + i] += frac;
        }
    }
    Tensor::new(vec![src, dst], m).expect("resample shape")
}

/// Projects envelope (and, for the face stream, raw-conv) features to `D`.
#[derive(Clone, Copy, Debug)]
pub struct AudioEncoder {
    pub raw: Option<[Conv1d; 2]>,
    pub proj: Linear,
}

impl AudioEncoder {
    pub fn new(store: &mut ParamStore<f64>, name: &str, dim: usize, raw_channels: Option<usize>, rng: &mut SeededRng) -> Self {
        let raw = raw_channels.map(|c| {
            [
                Conv1d::new(store, &format!("{name}.raw0"), 1, c, RAW_KERNEL, RAW_STRIDE, (0, 0), rng),
                Conv1d::same(store, &format!("{name}.raw1"), c, c, 3, rng),
            ]
        });
        let cin = ENVELOPE_CHANNELS + raw_channels.unwrap_or(0);
        AudioEncoder { raw, proj: Linear::new(store, &format!("{name}.proj"), cin, dim, true, rng) }
    }

    /// `env: [B, N, 3]`, `raw: [B, S, 1]` (ignored without a raw branch)
    /// → `[B, N, D]`.
    pub fn forward(&self, g: &mut Graph<'_, f64>, env: Var, raw: Option<Var>, rate: u32, fps: u32) -> Result<Var> {
        let es = g.shape(env).to_vec();
        let x = match (&self.raw, raw) {
            (Some([c0, c1]), Some(r)) => {
                let h = c0.forward(g, r)?;
                let h = g.silu(h);
                let h = c1.forward(g, h)?;
                let h = g.silu(h);
                let f = g.shape(h)[1];
                let hp = g.permute(h, &[0, 2, 1])?;
                let rm = g.constant(resample_matrix(f, es[1], rate, fps));
                let res = g.matmul(hp, rm)?;
                let res = g.permute(res, &[0, 2, 1])?;
                g.concat(&[env, res], 2)?
            }
            (Some(_), None) => return Err(invalid("face audio encoder needs raw samples")),
            (None, _) => env,
        };
        self.proj.forward(g, x)
    }
}

/// Token embedding followed by a projection to `D`.
#[derive(Clone, Copy, Debug)]
pub struct TextEncoder {
    pub emb: Embedding,
    pub proj: Linear,
}

impl TextEncoder {
    pub fn new(store: &mut ParamStore<f64>, name: &str, vocab: usize, width: usize, dim: usize, rng: &mut SeededRng) -> Self {
        TextEncoder {
            emb: Embedding::new(store, &format!("{name}.emb"), vocab, width, rng),
            proj: Linear::new(store, &format!("{name}.proj"), width, dim, true, rng),
        }
    }

    /// `ids` holds `B·N` tokens, row-major → `[B, N, D]`.
    pub fn forward(&self, g: &mut Graph<'_, f64>, ids: &[usize], batch: usize) -> Result<Var> {
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.emb.count) {
            return Err(invalid(format!("token id {bad} outside the {}-word vocabulary", self.emb.count)));
        }
        if batch == 0 || ids.len() % batch != 0 {
            return Err(invalid(format!("{} token ids do not split into {batch} rows", ids.len())));
        }
        let e = self.emb.forward(g, ids)?;
        let e = g.reshape(e, &[batch, ids.len() / batch, self.emb.dim])?;
        self.proj.forward(g, e)
    }
}

/// `[B, 4M, D] → [B, M, D]` by averaging groups of four frames.
pub fn pool_frames(g: &mut Graph<'_, f64>, x: Var, factor: usize) -> Result<Var> {
    let s = g.shape(x).to_vec();
    if s.len() != 3 || s[1] % factor != 0 {
        return Err(invalid(format!("cannot pool {:?} by {factor}", s)));
    }
    let r = g.reshape(x, &[s[0], s[1] / factor, factor, s[2]])?;
    g.mean_axis(r, 2)
}
