//! Stage-1 training loop over random windows of the training clips.

use std::collections::BTreeSet;

use super::layout::{MotionSequence, Part};
use super::vq::{VqConfig, VqModel, VqTerms, DOWNSAMPLE};
use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::ndiff::{Adam, AdamConfig, Graph, Tensor};
use crate::rng::SeededRng;

#[derive(Clone, Debug, PartialEq)]
pub struct VqTrainConfig {
    pub epochs: usize,
    /// Optimizer steps per epoch; an "epoch" is this many random batches.
    pub batches_per_epoch: usize,
    pub batch_size: usize,
    /// Frames per training window (multiple of 4).
    pub window: usize,
    pub lr: f64,
    pub lr_final: f64,
    /// Share of the final epochs trained at `lr_final`.
    pub final_fraction: f64,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for VqTrainConfig {
    fn default() -> Self {
        VqTrainConfig {
            epochs: 200,
            batches_per_epoch: 64,
            batch_size: 4,
            window: 32,
            lr: 1e-3,
            lr_final: 1e-4,
            final_fraction: 0.025,
            clip_norm: 0.99,
            seed: 0,
        }
    }
}

impl VqTrainConfig {
    /// Learning rate for a 0-based epoch.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let tail = (self.epochs as f64 * self.final_fraction).round() as usize;
        if epoch + tail >= self.epochs { self.lr_final } else { self.lr }
    }
}

const STAGE1_KEYS: &[&str] = &[
    "codebook_size", "code_dim", "hidden", "vel_acc", "epochs", "batches_per_epoch", "batch_size", "window", "lr", "lr_final", "final_fraction",
    "clip_norm", "seed",
];

/// Model and training settings of one stage-1 run, as read from a config
/// file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Stage1Config {
    pub model: VqConfig,
    pub train: VqTrainConfig,
}

impl Stage1Config {
    pub fn to_kv(&self) -> KeyValues {
        let (m, t) = (&self.model, &self.train);
        let mut kv = KeyValues::new();
        kv.set("codebook_size", m.codebook_size);
        kv.set("code_dim", m.code_dim);
        kv.set("hidden", m.hidden);
        kv.set("vel_acc", m.vel_acc);
        kv.set("epochs", t.epochs);
        kv.set("batches_per_epoch", t.batches_per_epoch);
        kv.set("batch_size", t.batch_size);
        kv.set("window", t.window);
        kv.set("lr", t.lr);
        kv.set("lr_final", t.lr_final);
        kv.set("final_fraction", t.final_fraction);
        kv.set("clip_norm", t.clip_norm);
        kv.set("seed", t.seed);
        kv
    }

    /// Defaults overridden by `kv`; unknown keys are rejected.
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let unknown = kv.unknown_keys(STAGE1_KEYS);
        if !unknown.is_empty() {
            return Err(Error::Config(format!("unknown stage-1 keys: {}", unknown.join(", "))));
        }
        let (m, t) = (VqConfig::default(), VqTrainConfig::default());
        let c = Stage1Config {
            model: VqConfig {
                codebook_size: kv.get_or("codebook_size", m.codebook_size)?,
                code_dim: kv.get_or("code_dim", m.code_dim)?,
                hidden: kv.get_or("hidden", m.hidden)?,
                vel_acc: kv.get_or("vel_acc", m.vel_acc)?,
            },
            train: VqTrainConfig {
                epochs: kv.get_or("epochs", t.epochs)?,
                batches_per_epoch: kv.get_or("batches_per_epoch", t.batches_per_epoch)?,
                batch_size: kv.get_or("batch_size", t.batch_size)?,
                window: kv.get_or("window", t.window)?,
                lr: kv.get_or("lr", t.lr)?,
                lr_final: kv.get_or("lr_final", t.lr_final)?,
                final_fraction: kv.get_or("final_fraction", t.final_fraction)?,
                clip_norm: kv.get_or("clip_norm", t.clip_norm)?,
                seed: kv.get_or("seed", t.seed)?,
            },
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let (m, t) = (&self.model, &self.train);
        if m.codebook_size == 0 || m.code_dim == 0 || m.hidden == 0 {
            return Err(Error::Config("codebook_size, code_dim and hidden must be positive".into()));
        }
        if t.batches_per_epoch == 0 || t.batch_size == 0 || t.window == 0 || t.window % DOWNSAMPLE != 0 {
            return Err(Error::Config(format!("batches, batch size and window (a multiple of {DOWNSAMPLE}) must be positive")));
        }
        if !(t.lr > 0.0 && t.lr_final > 0.0 && t.clip_norm > 0.0) || !(0.0..=1.0).contains(&t.final_fraction) {
            return Err(Error::Config("learning rates and clip_norm must be positive, final_fraction in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    /// Batch means of the loss terms.
    pub terms: VqTerms,
    /// Distinct codes selected during the epoch over codebook size.
    pub utilization: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct VqTrainLog {
    pub epochs: Vec<EpochStats>,
}

/// Random `[B, window, D]` batch of part slices.
pub fn sample_windows(clips: &[MotionSequence], batch: usize, window: usize, rng: &mut SeededRng) -> Result<Tensor<f64>> {
    let usable: Vec<&MotionSequence> = clips.iter().filter(|c| c.len >= window).collect();
    if usable.is_empty() {
        return Err(Error::Data(format!("no clip has at least {window} frames")));
    }
    let d = usable[0].dim;
    let mut data = Vec::with_capacity(batch * window * d);
    for _ in 0..batch {
        let c = usable[rng.below(usable.len())];
        let start = rng.below(c.len - window + 1);
        data.extend_from_slice(&c.frames[start * d..(start + window) * d]);
    }
    Tensor::new(vec![batch, window, d], data)
}

/// Trains one part model on full-body clips.
pub fn train_vqvae(part: Part, clips: &[MotionSequence], model_cfg: VqConfig, cfg: &VqTrainConfig) -> Result<(VqModel, VqTrainLog)> {
    if clips.is_empty() {
        return Err(Error::Data("empty training corpus".into()));
    }
    if cfg.window % DOWNSAMPLE != 0 || cfg.window < 4 {
        return Err(Error::Config(format!("window {} must be a positive multiple of {DOWNSAMPLE}", cfg.window)));
    }
    let slices: Vec<MotionSequence> = clips.iter().map(|c| c.part(part)).collect::<Result<_>>()?;
    let mut model = VqModel::new(part, model_cfg, cfg.seed);
    model.fit_normalization(&slices)?;
    let mut opt = Adam::new(AdamConfig { lr: cfg.lr, clip_norm: Some(cfg.clip_norm), ..AdamConfig::default() });
    let mut rng = SeededRng::new(cfg.seed).fork(0x7571 + part.tag() as u64);
    let mut log = VqTrainLog::default();
    for epoch in 0..cfg.epochs {
        opt.set_lr(cfg.lr_at(epoch));
        let mut sum = VqTerms::default();
        let mut used = BTreeSet::new();
        for _ in 0..cfg.batches_per_epoch {
            let x = sample_windows(&slices, cfg.batch_size, cfg.window, &mut rng)?;
            let mut grads = {
                let mut g = Graph::with_params(&model.store);
                let xv = g.constant(x);
                let f = model.forward(&mut g, xv)?;
                g.backward(f.loss)?;
                used.extend(f.indices);
                accumulate(&mut sum, &f.terms);
                g.param_grads()
            };
            opt.step(&mut model.store, &mut grads);
        }
        let k = cfg.batches_per_epoch.max(1) as f64;
        log.epochs.push(EpochStats {
            epoch,
            lr: cfg.lr_at(epoch),
            terms: scale(sum, 1.0 / k),
            utilization: used.len() as f64 / model.cfg.codebook_size as f64,
        });
    }
    Ok((model, log))
}

fn accumulate(acc: &mut VqTerms, t: &VqTerms) {
    acc.rec += t.rec;
    acc.translation += t.translation;
    acc.contact += t.contact;
    acc.vel += t.vel;
    acc.acc += t.acc;
    acc.codebook += t.codebook;
    acc.commit += t.commit;
    acc.total += t.total;
}

fn scale(t: VqTerms, s: f64) -> VqTerms {
    VqTerms {
        rec: t.rec * s,
        translation: t.translation * s,
        contact: t.contact * s,
        vel: t.vel * s,
        acc: t.acc * s,
        codebook: t.codebook * s,
        commit: t.commit * s,
        total: t.total * s,
    }
}

/// Fraction of codebook entries selected over every whole window of the
/// given part slices.
pub fn codebook_utilization(model: &VqModel, slices: &[MotionSequence], window: usize) -> Result<f64> {
    let mut used = BTreeSet::new();
    for c in slices {
        let usable = c.len / window * window;
        if usable == 0 {
            continue;
        }
        let x = Tensor::new(vec![usable / window, window, c.dim], c.frames[..usable * c.dim].to_vec())?;
        used.extend(model.tokenize(&x)?.2);
    }
    Ok(used.len() as f64 / model.cfg.codebook_size as f64)
}

/// Mean absolute second difference of frames, over all channels.
pub fn mean_abs_acceleration(m: &MotionSequence) -> f64 {
    if m.len < 3 {
        return 0.0;
    }
    let d = m.dim;
    let mut s = 0.0;
    for t in 1..m.len - 1 {
        for k in 0..d {
            s += (m.frames[(t + 1) * d + k] - 2.0 * m.frames[t * d + k] + m.frames[(t - 1) * d + k]).abs();
        }
    }
    s / ((m.len - 2) * d) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_drops_for_final_epochs() {
        let cfg = VqTrainConfig::default();
        assert_eq!(cfg.lr_at(0), cfg.lr);
        assert_eq!(cfg.lr_at(194), cfg.lr);
        assert_eq!(cfg.lr_at(195), cfg.lr_final);
        assert_eq!(cfg.lr_at(199), cfg.lr_final);
    }

    #[test]
    fn static_sequence_has_no_acceleration() {
        let m = MotionSequence::new(vec![0.3; 5 * 2], 5, 2, 30).unwrap();
        assert_eq!(mean_abs_acceleration(&m), 0.0);
    }
}
