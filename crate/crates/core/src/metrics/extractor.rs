//! Small convolutional autoencoder whose time-pooled latent feeds FGD.

use crate::error::{invalid, Error, Result};
use crate::motion::vq::DOWNSAMPLE;
use crate::motion::MotionSequence;
use crate::ndiff::nn::Conv1d;
use crate::ndiff::{Adam, AdamConfig, Graph, ParamId, ParamStore, Tensor, Var};
use crate::rng::SeededRng;
use crate::motion::train::sample_windows;

#[derive(Clone, Debug, PartialEq)]
pub struct ExtractorConfig {
    pub latent: usize,
    pub hidden: usize,
    pub window: usize,
    pub epochs: usize,
    pub batches_per_epoch: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        ExtractorConfig { latent: 32, hidden: 64, window: 32, epochs: 40, batches_per_epoch: 8, batch_size: 8, lr: 1e-3, seed: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    pub cfg: ExtractorConfig,
    pub dim: usize,
    pub store: ParamStore<f64>,
    mean: ParamId,
    std: ParamId,
    enc: [Conv1d; 3],
    dec: [Conv1d; 3],
    /// Per-epoch mean L1 on normalized frames.
    pub curve: Vec<f64>,
    trained: bool,
}

impl FeatureExtractor {
    pub fn new(dim: usize, cfg: ExtractorConfig) -> Self {
        let mut rng = SeededRng::new(cfg.seed).fork(0xFE47);
        let mut store = ParamStore::new();
        let (h, c) = (cfg.hidden, cfg.latent);
        let mean = store.add("fe.norm_mean", Tensor::zeros(vec![dim]));
        let std = store.add("fe.norm_std", Tensor::full(vec![dim], 1.0));
        store.set_frozen(mean, true);
        store.set_frozen(std, true);
        let enc = [
            Conv1d::new(&mut store, "fe.enc0", dim, h, 4, 2, (1, 1), &mut rng),
            Conv1d::new(&mut store, "fe.enc1", h, h, 4, 2, (1, 1), &mut rng),
            Conv1d::same(&mut store, "fe.enc2", h, c, 3, &mut rng),
        ];
        let dec = [
            Conv1d::same(&mut store, "fe.dec0", c, h, 3, &mut rng),
            Conv1d::same(&mut store, "fe.dec1", h, h, 3, &mut rng),
            Conv1d::same(&mut store, "fe.dec2", h, dim, 3, &mut rng),
        ];
        FeatureExtractor { cfg, dim, store, mean, std, enc, dec, curve: Vec::new(), trained: false }
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    fn normalize(&self, g: &mut Graph<'_, f64>, x: Var) -> Result<Var> {
        let (m, s) = (g.param(self.mean), g.param(self.std));
        let c = g.sub(x, m)?;
        g.div(c, s)
    }

    /// Normalized `[B, T, D] → [B, T/4, latent]`.
    fn encode_normalized(&self, g: &mut Graph<'_, f64>, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, conv) in self.enc.iter().enumerate() {
            h = conv.forward(g, h)?;
            if i < 2 {
                h = g.silu(h);
            }
        }
        Ok(h)
    }

    fn decode_normalized(&self, g: &mut Graph<'_, f64>, z: Var) -> Result<Var> {
        let mut h = z;
        for (i, conv) in self.dec.iter().enumerate() {
            if i < 2 {
                h = g.repeat_interleave(h, 1, 2)?;
            }
            h = conv.forward(g, h)?;
            if i < 2 {
                h = g.silu(h);
            }
        }
        Ok(h)
    }

    fn fit_normalization(&mut self, clips: &[MotionSequence]) {
        let d = self.dim;
        let (mut s, mut s2, mut n) = (vec![0.0; d], vec![0.0; d], 0usize);
        for c in clips {
            for f in c.frames.chunks(d) {
                for k in 0..d {
                    s[k] += f[k];
                    s2[k] += f[k] * f[k];
                }
            }
            n += c.len;
        }
        let n = n.max(1) as f64;
        for k in 0..d {
            let m = s[k] / n;
            self.store.get_mut(self.mean).data_mut()[k] = m;
            self.store.get_mut(self.std).data_mut()[k] = (s2[k] / n - m * m).max(0.0).sqrt().max(1e-2);
        }
    }

    /// Trains on random windows; returns the final epoch's normalized L1.
    pub fn train(&mut self, clips: &[MotionSequence]) -> Result<f64> {
        if clips.is_empty() {
            return Err(Error::Data("feature extractor needs training clips".into()));
        }
        if clips.iter().any(|c| c.dim != self.dim) {
            return Err(invalid(format!("feature extractor expects {}-channel clips", self.dim)));
        }
        if self.cfg.window == 0 || self.cfg.window % DOWNSAMPLE != 0 {
            return Err(Error::Config(format!("extractor window {} must be a positive multiple of {DOWNSAMPLE}", self.cfg.window)));
        }
        self.fit_normalization(clips);
        let mut opt = Adam::new(AdamConfig { lr: self.cfg.lr, ..AdamConfig::default() });
        let mut rng = SeededRng::new(self.cfg.seed).fork(0xFE48);
        self.curve.clear();
        for _ in 0..self.cfg.epochs {
            let mut total = 0.0;
            for _ in 0..self.cfg.batches_per_epoch {
                let x = sample_windows(clips, self.cfg.batch_size, self.cfg.window, &mut rng)?;
                let mut grads = {
                    let mut g = Graph::with_params(&self.store);
                    let xv = g.constant(x);
                    let xn = self.normalize(&mut g, xv)?;
                    let z = self.encode_normalized(&mut g, xn)?;
                    let r = self.decode_normalized(&mut g, z)?;
                    let loss = g.l1(r, xn)?;
                    total += g.value(loss).item();
                    g.backward(loss)?;
                    g.param_grads()
                };
                opt.step(&mut self.store, &mut grads);
            }
            self.curve.push(total / self.cfg.batches_per_epoch.max(1) as f64);
        }
        self.trained = true;
        Ok(self.curve.last().copied().unwrap_or(0.0))
    }

    /// Mean absolute reconstruction error in the clips' own units, over
    /// whole windows.
    pub fn reconstruction_l1(&self, clips: &[MotionSequence]) -> Result<f64> {
        let (mut s, mut n) = (0.0, 0usize);
        for c in clips {
            let t = c.len / DOWNSAMPLE * DOWNSAMPLE;
            if t == 0 {
                continue;
            }
            let mut g = Graph::inference(&self.store);
            let xv = g.constant(Tensor::new(vec![1, t, c.dim], c.frames[..t * c.dim].to_vec())?);
            let xn = self.normalize(&mut g, xv)?;
            let z = self.encode_normalized(&mut g, xn)?;
            let r = self.decode_normalized(&mut g, z)?;
            let (sd, mu) = (g.param(self.std), g.param(self.mean));
            let r = g.mul(r, sd)?;
            let r = g.add(r, mu)?;
            s += g.value(r).data().iter().zip(&c.frames[..t * c.dim]).map(|(a, b)| (a - b).abs()).sum::<f64>();
            n += t * c.dim;
        }
        if n == 0 {
            return Err(Error::Data("no whole windows to reconstruct".into()));
        }
        Ok(s / n as f64)
    }

    /// Time-pooled latent of one clip (frames beyond a multiple of 4 are
    /// dropped).
    pub fn features(&self, clip: &MotionSequence) -> Result<Vec<f64>> {
        if !self.trained {
            return Err(invalid("feature extractor is untrained"));
        }
        if clip.dim != self.dim {
            return Err(invalid(format!("feature extractor expects {}-channel clips, got {}", self.dim, clip.dim)));
        }
        let t = clip.len / DOWNSAMPLE * DOWNSAMPLE;
        if t == 0 {
            return Err(invalid(format!("clip of {} frames is shorter than {DOWNSAMPLE}", clip.len)));
        }
        let mut g = Graph::inference(&self.store);
        let xv = g.constant(Tensor::new(vec![1, t, clip.dim], clip.frames[..t * clip.dim].to_vec())?);
        let xn = self.normalize(&mut g, xv)?;
        let z = self.encode_normalized(&mut g, xn)?;
        let pooled = g.mean_axis(z, 1)?;
        Ok(g.value(pooled).data().to_vec())
    }

    pub fn features_all(&self, clips: &[MotionSequence]) -> Result<Vec<Vec<f64>>> {
        clips.iter().map(|c| self.features(c)).collect()
    }

    /// Restores trained weights saved from [`Self::store`].
    pub fn mark_trained(&mut self) {
        self.trained = true;
    }
}

/// Mean per-channel standard deviation of the clips' frames.
pub fn mean_channel_std(clips: &[MotionSequence]) -> f64 {
    let Some(d) = clips.first().map(|c| c.dim) else { return 0.0 };
    let (mut s, mut s2, mut n) = (vec![0.0; d], vec![0.0; d], 0.0);
    for c in clips {
        for f in c.frames.chunks(d) {
            for k in 0..d {
                s[k] += f[k];
                s2[k] += f[k] * f[k];
            }
        }
        n += c.len as f64;
    }
    (0..d).map(|k| (s2[k] / n - (s[k] / n).powi(2)).max(0.0).sqrt()).sum::<f64>() / d as f64
}
