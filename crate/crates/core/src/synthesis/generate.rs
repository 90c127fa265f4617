//! End-to-end generation through the frozen stage-1 decoders.

use std::time::Instant;

use super::features::{envelope_features, raw_samples, ENVELOPE_CHANNELS};
use super::model::{BatchInputs, Generator};
use super::train::order_models;
use super::argmax_rows;
use crate::corpus::Audio;
use crate::error::{Error, Result};
use crate::motion::{MotionSequence, Part, VqModel, DOWNSAMPLE};
use crate::ndiff::{Graph, Tensor};

/// Wall time of each pipeline stage for one call, in seconds.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ModuleTimes {
    pub audio: f64,
    pub text: f64,
    /// Fusion, global queries and the global scan.
    pub global: f64,
    /// Query refinement, local scans and heads.
    pub local: f64,
    /// Per decoder, [`Part::ALL`] order.
    pub decoders: [f64; 4],
    pub total: f64,
}

/// Motion for `audio` and per-frame `tokens`; the output has the largest
/// multiple of 4 frames covered by both. Parts trained with a classification
/// weight decode the codebook row of their arg-max code; the others decode
/// the predicted latent.
pub fn generate(gen: &Generator, vqs: &[VqModel], audio: &Audio, tokens: &[usize], speaker: usize) -> Result<(MotionSequence, ModuleTimes)> {
    let start = Instant::now();
    let models = order_models(vqs)?;
    let fps = gen.cfg.fps;
    if audio.rate != gen.cfg.sample_rate {
        return Err(Error::Data(format!("audio rate {} Hz, generator expects {} Hz", audio.rate, gen.cfg.sample_rate)));
    }
    let covered = (audio.samples.len() as f64 * fps as f64 / audio.rate as f64).floor() as usize;
    let frames = covered.min(tokens.len()) / DOWNSAMPLE * DOWNSAMPLE;
    if frames == 0 {
        return Err(Error::Data("input is shorter than one latent step".into()));
    }
    let mut times = ModuleTimes::default();
    let raw = raw_samples(audio, frames, fps)?;
    let inp = BatchInputs {
        batch: 1,
        frames,
        envelope: Tensor::new(vec![1, frames, ENVELOPE_CHANNELS], envelope_features(audio, frames, fps)?.into_data())?,
        raw: Tensor::new(vec![1, raw.len(), 1], raw)?,
        tokens: tokens[..frames].to_vec(),
        speakers: vec![speaker],
    };
    let mut g = Graph::inference(&gen.store);
    let t = Instant::now();
    let audio_f = gen.audio_features(&mut g, &inp)?;
    times.audio = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let f_t = gen.text_features(&mut g, &inp)?;
    times.text = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let (state, globals) = gen.global_stage(&mut g, &inp, audio_f, f_t)?;
    times.global = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let refs = gen.refine_stage(&mut g, &state)?;
    let mut u = refs;
    for i in 0..2 {
        u[i] = g.add(refs[i], globals[i])?;
    }
    let out = gen.local_scan(&mut g, u, None)?;
    times.local = t.elapsed().as_secs_f64();
    let mut parts = Vec::with_capacity(4);
    for (i, m) in models.iter().enumerate() {
        let t = Instant::now();
        let d = gen.parts[i].dims;
        let z = if gen.cfg.alpha[i] != 0.0 {
            let idx = argmax_rows(g.value(out.logits[i]).data(), d.codebook_size);
            let cb = m.codebook_values().data();
            let rows = idx.iter().flat_map(|&k| cb[k * d.code_dim..(k + 1) * d.code_dim].iter().copied()).collect();
            Tensor::new(vec![1, idx.len(), d.code_dim], rows)?
        } else {
            g.value(out.latents[i]).clone()
        };
        let x = m.decode_tensor(&z)?;
        let dim = m.part.dim();
        parts.push((Part::ALL[i], MotionSequence::new(x.into_data(), frames, dim, fps)?));
        times.decoders[i] = t.elapsed().as_secs_f64();
    }
    let motion = MotionSequence::merge(&parts)?;
    times.total = start.elapsed().as_secs_f64();
    Ok((motion, times))
}
