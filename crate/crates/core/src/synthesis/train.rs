//! Stage-2 training against frozen stage-1 code targets.

use super::features::{envelope_features, raw_samples, ENVELOPE_CHANNELS};
use super::model::{BatchInputs, Generator, PartDims};
use super::{generator_loss, GeneratorConfig, LossTerms, PartLoss};
use crate::corpus::Clip;
use crate::error::{Error, Result};
use crate::motion::{Part, VqModel, DOWNSAMPLE};
use crate::ndiff::{Adam, AdamConfig, Graph, Tensor};
use crate::rng::SeededRng;

/// Frozen encode+quantize targets for a batch, [`Part::ALL`] order.
#[derive(Clone, Debug)]
pub struct Targets {
    /// Quantized latents `[B, M, C_o]`.
    pub latents: Vec<Tensor<f64>>,
    pub indices: Vec<Vec<usize>>,
}

/// One clip with its features and code targets precomputed.
#[derive(Clone, Debug)]
pub struct Stage2Example {
    pub frames: usize,
    pub envelope: Vec<f64>,
    pub raw: Vec<f64>,
    pub tokens: Vec<usize>,
    pub speaker: usize,
    /// Per part: `M·C_o` latent values and `M` indices.
    pub latents: Vec<Vec<f64>>,
    pub indices: Vec<Vec<usize>>,
}

/// Stage-1 models in [`Part::ALL`] order, or a checkpoint error naming the
/// first missing part.
pub fn order_models(vqs: &[VqModel]) -> Result<[&VqModel; 4]> {
    let find = |p: Part| vqs.iter().find(|m| m.part == p).ok_or_else(|| Error::Checkpoint(format!("no stage-1 model for part {p}")));
    Ok([find(Part::Face)?, find(Part::Upper)?, find(Part::Hands)?, find(Part::Lower)?])
}

pub fn part_dims(vqs: &[VqModel]) -> Result<[PartDims; 4]> {
    Ok(order_models(vqs)?.map(|m| PartDims { code_dim: m.cfg.code_dim, codebook_size: m.cfg.codebook_size }))
}

/// Features and frozen targets for each clip (frames cut to a multiple of 4).
pub fn prepare_examples(clips: &[Clip], vqs: &[VqModel], fps: u32) -> Result<Vec<Stage2Example>> {
    let models = order_models(vqs)?;
    clips
        .iter()
        .map(|c| {
            let frames = c.motion.len.min(c.tokens.len()) / DOWNSAMPLE * DOWNSAMPLE;
            if frames == 0 {
                return Err(Error::Data(format!("clip {} is shorter than {DOWNSAMPLE} frames", c.meta.id)));
            }
            let motion = c.motion.window(0, frames);
            let mut latents = Vec::with_capacity(4);
            let mut indices = Vec::with_capacity(4);
            for m in models {
                let slice = motion.part(m.part)?;
                let x = Tensor::new(vec![1, frames, slice.dim], slice.frames)?;
                let (_, zq, idx) = m.tokenize(&x)?;
                latents.push(zq.into_data());
                indices.push(idx);
            }
            Ok(Stage2Example {
                frames,
                envelope: envelope_features(&c.audio, frames, fps)?.into_data(),
                raw: raw_samples(&c.audio, frames, fps)?,
                tokens: c.tokens[..frames].to_vec(),
                speaker: c.meta.speaker,
                latents,
                indices,
            })
        })
        .collect()
}

/// Stacks examples, cropping each to the shortest one.
pub fn make_batch(examples: &[&Stage2Example], dims: &[PartDims; 4]) -> Result<(BatchInputs, Targets)> {
    let b = examples.len();
    let n = examples.iter().map(|e| e.frames).min().ok_or_else(|| Error::Data("empty batch".into()))?;
    let m = n / DOWNSAMPLE;
    let s = examples.iter().map(|e| e.raw.len() * n / e.frames).min().unwrap_or(0);
    let mut env = Vec::with_capacity(b * n * ENVELOPE_CHANNELS);
    let mut raw = Vec::with_capacity(b * s);
    let mut tokens = Vec::with_capacity(b * n);
    for e in examples {
        env.extend_from_slice(&e.envelope[..n * ENVELOPE_CHANNELS]);
        raw.extend_from_slice(&e.raw[..s]);
        tokens.extend_from_slice(&e.tokens[..n]);
    }
    let mut latents = Vec::with_capacity(4);
    let mut indices = Vec::with_capacity(4);
    for (i, d) in dims.iter().enumerate() {
        let mut z = Vec::with_capacity(b * m * d.code_dim);
        let mut idx = Vec::with_capacity(b * m);
        for e in examples {
            z.extend_from_slice(&e.latents[i][..m * d.code_dim]);
            idx.extend_from_slice(&e.indices[i][..m]);
        }
        latents.push(Tensor::new(vec![b, m, d.code_dim], z)?);
        indices.push(idx);
    }
    let inputs = BatchInputs {
        batch: b,
        frames: n,
        envelope: Tensor::new(vec![b, n, ENVELOPE_CHANNELS], env)?,
        raw: Tensor::new(vec![b, s, 1], raw)?,
        tokens,
        speakers: examples.iter().map(|e| e.speaker).collect(),
    };
    Ok((inputs, Targets { latents, indices }))
}

/// Random temporal mask: `round(ratio·M)` distinct steps per clip.
pub fn random_mask(batch: usize, m: usize, ratio: f64, rng: &mut SeededRng) -> Vec<bool> {
    let k = (ratio * m as f64).round() as usize;
    let mut out = vec![false; batch * m];
    for b in 0..batch {
        let mut steps: Vec<usize> = (0..m).collect();
        rng.shuffle(&mut steps);
        for &t in &steps[..k.min(m)] {
            out[b * m + t] = true;
        }
    }
    out
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Stage2Log {
    /// Batch-mean loss terms per epoch.
    pub epochs: Vec<LossTerms>,
}

/// Held-out scores per part, [`Part::ALL`] order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Stage2Eval {
    pub parts: [PartLoss; 4],
    /// Total variance of the target latents (summed over coordinates): the
    /// reconstruction loss of always predicting the mean latent.
    pub target_var: [f64; 4],
}

fn add_terms(acc: &mut LossTerms, t: &LossTerms, w: f64) {
    for i in 0..4 {
        acc.parts[i].cls += w * t.parts[i].cls;
        acc.parts[i].rec += w * t.parts[i].rec;
        acc.parts[i].accuracy += w * t.parts[i].accuracy;
    }
    acc.total += w * t.total;
}

/// Trains a generator on prepared examples. Stage-1 models are only read.
pub fn train_stage2(train: &[Stage2Example], vqs: &[VqModel], cfg: &GeneratorConfig) -> Result<(Generator, Stage2Log)> {
    if train.is_empty() {
        return Err(Error::Data("no stage-2 training clips".into()));
    }
    let dims = part_dims(vqs)?;
    let mut gen = Generator::new(cfg.clone(), dims)?;
    let mut opt = Adam::new(AdamConfig { lr: cfg.lr, clip_norm: Some(cfg.clip_norm), ..AdamConfig::default() });
    let mut rng = SeededRng::new(cfg.seed).fork(0x57A6E2);
    let mut log = Stage2Log::default();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for _ in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut acc = LossTerms::default();
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Stage2Example> = chunk.iter().map(|&i| &train[i]).collect();
            let (inp, targets) = make_batch(&batch, &dims)?;
            let mask = random_mask(inp.batch, inp.frames / DOWNSAMPLE, cfg.mask_ratio, &mut rng);
            let mut grads = {
                let mut g = Graph::with_params(&gen.store);
                let out = gen.forward(&mut g, &inp, Some(&mask))?;
                let (loss, terms) = generator_loss(&mut g, &out, &targets, cfg)?;
                add_terms(&mut acc, &terms, batch.len() as f64 / train.len() as f64);
                g.backward(loss)?;
                g.param_grads()
            };
            opt.step(&mut gen.store, &mut grads);
        }
        log.epochs.push(acc);
    }
    Ok((gen, log))
}

/// Unmasked scores over held-out examples, batched like training.
pub fn evaluate_stage2(gen: &Generator, examples: &[Stage2Example]) -> Result<Stage2Eval> {
    if examples.is_empty() {
        return Err(Error::Data("no held-out clips to evaluate".into()));
    }
    let dims = gen.part_dims();
    let mut acc = LossTerms::default();
    let mut sum: Vec<Vec<f64>> = dims.iter().map(|d| vec![0.0; d.code_dim]).collect();
    let mut sum2 = sum.clone();
    let mut count = [0usize; 4];
    let total: usize = examples.len();
    for chunk in examples.chunks(gen.cfg.batch_size) {
        let batch: Vec<&Stage2Example> = chunk.iter().collect();
        let (inp, targets) = make_batch(&batch, &dims)?;
        let mut g = Graph::inference(&gen.store);
        let out = gen.forward(&mut g, &inp, None)?;
        let (_, terms) = generator_loss(&mut g, &out, &targets, &gen.cfg)?;
        add_terms(&mut acc, &terms, batch.len() as f64 / total as f64);
        for i in 0..4 {
            let c = dims[i].code_dim;
            for row in targets.latents[i].data().chunks(c) {
                for (k, &v) in row.iter().enumerate() {
                    sum[i][k] += v;
                    sum2[i][k] += v * v;
                }
            }
            count[i] += targets.latents[i].numel() / c;
        }
    }
    let target_var = std::array::from_fn(|i| {
        let n = count[i].max(1) as f64;
        sum[i].iter().zip(&sum2[i]).map(|(s, s2)| (s2 / n - (s / n).powi(2)).max(0.0)).sum::<f64>()
    });
    Ok(Stage2Eval { parts: acc.parts, target_var })
}
