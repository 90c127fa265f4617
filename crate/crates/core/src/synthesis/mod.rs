//! Stage-2 speech-to-gesture generation in the frozen stage-1 code spaces.

pub mod features;
pub mod generate;
pub mod model;
pub mod train;

pub use features::{envelope_features, raw_samples, AudioEncoder, TextEncoder, ENVELOPE_CHANNELS};
pub use generate::{generate, ModuleTimes};
pub use model::{blend, fuse_features, fusion_weights, pair_softmax, BatchInputs, Generator, LocalOut, PartDims, Stream, StreamFeatures};
pub use train::{evaluate_stage2, prepare_examples, train_stage2, Stage2Eval, Stage2Example, Stage2Log, Targets};

use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::motion::Part;
use crate::ndiff::{Graph, Var};

pub const GENERATOR_MAGIC: [u8; 4] = *b"MTG2";

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorConfig {
    pub dim: usize,
    pub heads: usize,
    /// SSM state size per channel.
    pub state: usize,
    pub text_width: usize,
    /// Channels of the raw-audio convolution (face stream).
    pub raw_channels: usize,
    /// Stored global query rows; the training latent length.
    pub query_len: usize,
    pub vocab: usize,
    pub speakers: usize,
    pub fps: u32,
    pub sample_rate: u32,
    pub mask_ratio: f64,
    /// Classification weight per part, [`Part::ALL`] order.
    pub alpha: [f64; 4],
    /// Latent regression weight per part.
    pub beta: [f64; 4],
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            dim: 64,
            heads: 4,
            state: 8,
            text_width: 32,
            raw_channels: 16,
            query_len: 60,
            vocab: 32,
            speakers: 2,
            fps: 30,
            sample_rate: 16000,
            mask_ratio: 1.0 / 3.0,
            alpha: [0.0, 1.0, 1.0, 1.0],
            beta: [3.0; 4],
            epochs: 40,
            batch_size: 4,
            lr: 1e-3,
            clip_norm: 0.99,
            seed: 0,
        }
    }
}

const KEYS: &[&str] = &[
    "dim", "heads", "state", "text_width", "raw_channels", "query_len", "vocab", "speakers", "fps", "sample_rate", "mask_ratio", "epochs",
    "batch_size", "lr", "clip_norm", "seed", "alpha.face", "alpha.upper", "alpha.hands", "alpha.lower", "beta.face", "beta.upper",
    "beta.hands", "beta.lower",
];

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.dim == 0 || self.heads == 0 || self.dim % self.heads != 0 {
            return bad(format!("dim {} must be a positive multiple of heads {}", self.dim, self.heads));
        }
        if self.state == 0 || self.text_width == 0 || self.raw_channels == 0 || self.query_len == 0 {
            return bad("state, text_width, raw_channels and query_len must be positive".into());
        }
        if self.vocab == 0 || self.speakers == 0 || self.fps == 0 || self.sample_rate == 0 {
            return bad("vocab, speakers, fps and sample_rate must be positive".into());
        }
        if !(0.0..1.0).contains(&self.mask_ratio) {
            return bad(format!("mask_ratio {} outside [0, 1)", self.mask_ratio));
        }
        if self.alpha.iter().chain(&self.beta).any(|w| !(w.is_finite() && *w >= 0.0)) {
            return bad("loss weights must be finite and non-negative".into());
        }
        if self.batch_size == 0 || !(self.lr > 0.0) || !(self.clip_norm > 0.0) {
            return bad("batch_size, lr and clip_norm must be positive".into());
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("dim", self.dim);
        kv.set("heads", self.heads);
        kv.set("state", self.state);
        kv.set("text_width", self.text_width);
        kv.set("raw_channels", self.raw_channels);
        kv.set("query_len", self.query_len);
        kv.set("vocab", self.vocab);
        kv.set("speakers", self.speakers);
        kv.set("fps", self.fps);
        kv.set("sample_rate", self.sample_rate);
        kv.set("mask_ratio", self.mask_ratio);
        kv.set("epochs", self.epochs);
        kv.set("batch_size", self.batch_size);
        kv.set("lr", self.lr);
        kv.set("clip_norm", self.clip_norm);
        kv.set("seed", self.seed);
        for (i, p) in Part::ALL.iter().enumerate() {
            kv.set(&format!("alpha.{p}"), self.alpha[i]);
            kv.set(&format!("beta.{p}"), self.beta[i]);
        }
        kv
    }

    /// Defaults overridden by `kv`; unknown keys are rejected.
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let unknown = kv.unknown_keys(KEYS);
        if !unknown.is_empty() {
            return Err(Error::Config(format!("unknown generator keys: {}", unknown.join(", "))));
        }
        let d = GeneratorConfig::default();
        let mut c = GeneratorConfig {
            dim: kv.get_or("dim", d.dim)?,
            heads: kv.get_or("heads", d.heads)?,
            state: kv.get_or("state", d.state)?,
            text_width: kv.get_or("text_width", d.text_width)?,
            raw_channels: kv.get_or("raw_channels", d.raw_channels)?,
            query_len: kv.get_or("query_len", d.query_len)?,
            vocab: kv.get_or("vocab", d.vocab)?,
            speakers: kv.get_or("speakers", d.speakers)?,
            fps: kv.get_or("fps", d.fps)?,
            sample_rate: kv.get_or("sample_rate", d.sample_rate)?,
            mask_ratio: kv.get_or("mask_ratio", d.mask_ratio)?,
            epochs: kv.get_or("epochs", d.epochs)?,
            batch_size: kv.get_or("batch_size", d.batch_size)?,
            lr: kv.get_or("lr", d.lr)?,
            clip_norm: kv.get_or("clip_norm", d.clip_norm)?,
            seed: kv.get_or("seed", d.seed)?,
            ..d
        };
        for (i, p) in Part::ALL.iter().enumerate() {
            c.alpha[i] = kv.get_or(&format!("alpha.{p}"), c.alpha[i])?;
            c.beta[i] = kv.get_or(&format!("beta.{p}"), c.beta[i])?;
        }
        c.validate()?;
        Ok(c)
    }
}

/// Loss terms of one part.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PartLoss {
    /// NLL of the target code indices.
    pub cls: f64,
    /// Squared latent error, summed over coordinates and averaged over
    /// steps.
    pub rec: f64,
    /// Share of steps whose arg-max code is the target.
    pub accuracy: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub parts: [PartLoss; 4],
    pub total: f64,
}

impl LossTerms {
    /// `Σ α·cls + β·rec` recomputed from the reported parts.
    pub fn weighted_sum(&self, cfg: &GeneratorConfig) -> f64 {
        (0..4).map(|i| self.weighted_part(cfg, i)).sum()
    }

    fn weighted_part(&self, cfg: &GeneratorConfig, i: usize) -> f64 {
        let p = &self.parts[i];
        let mut v = cfg.beta[i] * p.rec;
        if cfg.alpha[i] != 0.0 {
            v += cfg.alpha[i] * p.cls;
        }
        v
    }
}

/// Arg-max over the last axis of `[rows, n]` values.
pub fn argmax_rows(values: &[f64], n: usize) -> Vec<usize> {
    values
        .chunks(n)
        .map(|r| r.iter().enumerate().fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best }).0)
        .collect()
}

/// `Σ_o α_o·NLL_o + β_o·mean_t ‖z_t − ẑ_t‖²`; parts with `α = 0` add no
/// classification term.
pub fn generator_loss(g: &mut Graph<'_, f64>, out: &LocalOut, targets: &Targets, cfg: &GeneratorConfig) -> Result<(Var, LossTerms)> {
    let mut terms = LossTerms::default();
    let mut total: Option<Var> = None;
    for i in 0..4 {
        let zt = g.constant(targets.latents[i].clone());
        let c = targets.latents[i].shape().last().copied().unwrap_or(1);
        let mse = g.mse(out.latents[i], zt)?;
        let rec = g.scale(mse, c as f64);
        let lp = g.log_softmax(out.logits[i], 2)?;
        let cls = g.nll(lp, &targets.indices[i])?;
        let n = *g.shape(out.logits[i]).last().unwrap_or(&1);
        let pred = argmax_rows(g.value(out.logits[i]).data(), n);
        let hits = pred.iter().zip(&targets.indices[i]).filter(|(a, b)| a == b).count();
        terms.parts[i] = PartLoss {
            cls: g.value(cls).item(),
            rec: g.value(rec).item(),
            accuracy: hits as f64 / pred.len().max(1) as f64,
        };
        let mut part = g.scale(rec, cfg.beta[i]);
        if cfg.alpha[i] != 0.0 {
            let c = g.scale(cls, cfg.alpha[i]);
            part = g.add(part, c)?;
        }
        total = Some(match total {
            Some(t) => g.add(t, part)?,
            None => part,
        });
    }
    let total = total.expect("four parts");
    terms.total = g.value(total).item();
    Ok((total, terms))
}

impl Generator {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut meta = self.cfg.to_kv();
        for p in &self.parts {
            meta.set(&format!("code_dim.{}", p.part), p.dims.code_dim);
            meta.set(&format!("codebook_size.{}", p.part), p.dims.codebook_size);
        }
        crate::checkpoint::write(path, GENERATOR_MAGIC, &meta, &self.store)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let ck = crate::checkpoint::read(path, GENERATOR_MAGIC)?;
        let bad = |e: Error| Error::Checkpoint(format!("{}: {e}", path.display()));
        let mut kv = ck.meta.clone();
        let mut dims = [PartDims { code_dim: 0, codebook_size: 0 }; 4];
        for (i, p) in Part::ALL.iter().enumerate() {
            for (key, slot) in [("code_dim", &mut dims[i].code_dim), ("codebook_size", &mut dims[i].codebook_size)] {
                let k = format!("{key}.{p}");
                *slot = kv.get(&k).map_err(bad)?.ok_or_else(|| Error::Checkpoint(format!("{}: missing {k}", path.display())))?;
                kv.entries.remove(&k);
            }
        }
        let cfg = GeneratorConfig::from_kv(&kv).map_err(bad)?;
        let mut gen = Generator::new(cfg, dims).map_err(bad)?;
        gen.store.load_named(&ck.tensors)?;
        Ok(gen)
    }
}
