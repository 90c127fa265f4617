//! The stage-2 network: fusion gates, global scan, query refinement and the
//! per-part local scans with their latent and code heads.

use super::features::{pool_frames, AudioEncoder, TextEncoder};
use super::GeneratorConfig;
use crate::attention::{Attention, AttentionConfig};
use crate::error::{invalid, Result};
use crate::motion::{Part, DOWNSAMPLE};
use crate::ndiff::nn::{Embedding, Linear};
use crate::ndiff::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::rng::SeededRng;
use crate::ssm::{gated_scan, mamba_block, Discretization, SsmParams};

/// Face and body branches carry separate audio features and scans.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Face,
    Body,
}

impl Stream {
    pub const ALL: [Stream; 2] = [Stream::Face, Stream::Body];

    pub fn of(part: Part) -> Stream {
        if part == Part::Face {
            Stream::Face
        } else {
            Stream::Body
        }
    }

    fn index(self) -> usize {
        self as usize
    }

    fn name(self) -> &'static str {
        match self {
            Stream::Face => "face",
            Stream::Body => "body",
        }
    }
}

/// Fusion gate projections of one stream.
#[derive(Clone, Copy, Debug)]
pub struct FusionGates {
    pub w_t: Linear,
    pub w_a: Linear,
}

#[derive(Clone, Copy, Debug)]
pub struct StreamLayers {
    pub audio: AudioEncoder,
    pub gates: FusionGates,
    pub speech_scan: SsmParams,
    pub query_scan: SsmParams,
    pub merge: Linear,
    pub refine: Attention,
}

/// Code-space widths of one part, taken from its stage-1 model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PartDims {
    pub code_dim: usize,
    pub codebook_size: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct PartLayers {
    pub part: Part,
    pub dims: PartDims,
    pub input: Linear,
    pub attn: Option<Attention>,
    pub scan: SsmParams,
    pub latent_head: Linear,
    pub logit_head: Linear,
}

/// All stage-2 layers; parameters live in `store`.
#[derive(Clone, Debug)]
pub struct Generator {
    pub cfg: GeneratorConfig,
    pub store: ParamStore<f64>,
    pub text: TextEncoder,
    pub speaker: Embedding,
    pub queries: ParamId,
    pub query_attn: Attention,
    pub streams: [StreamLayers; 2],
    /// Face, upper, hands, lower (the order of [`Part::ALL`]).
    pub parts: [PartLayers; 4],
    pub trunk: Linear,
}

/// Speech features of one stream at latent rate, `[B, M, D]` each.
#[derive(Clone, Copy, Debug)]
pub struct StreamFeatures {
    pub f_a: Var,
    pub f_t: Var,
}

/// Outputs of the global scan for one stream.
#[derive(Clone, Copy, Debug)]
pub struct GlobalOut {
    /// `[B, M, D]`.
    pub f_global: Var,
    /// `[B, 2M, D]`.
    pub f_speech: Var,
}

/// Per-part outputs of the local scan, in [`Part::ALL`] order.
#[derive(Clone, Debug)]
pub struct LocalOut {
    /// `[B, M, C_o]`.
    pub latents: Vec<Var>,
    /// `[B, M, N_o]`.
    pub logits: Vec<Var>,
    /// Gated scan output of each part, `[B, M, D]`.
    pub paths: Vec<Var>,
}

/// Inputs for one batch of equal-length clips.
#[derive(Clone, Debug)]
pub struct BatchInputs {
    pub batch: usize,
    /// Motion frames per clip, a multiple of 4.
    pub frames: usize,
    /// `[B, N, 3]`.
    pub envelope: Tensor<f64>,
    /// `[B, S, 1]`.
    pub raw: Tensor<f64>,
    /// `B·N` token ids.
    pub tokens: Vec<usize>,
    pub speakers: Vec<usize>,
}

fn expand(g: &mut Graph<'_, f64>, x: Var, batch: usize) -> Result<Var> {
    let s = g.shape(x).to_vec();
    if s[0] == batch {
        return Ok(x);
    }
    let mut shape = s;
    shape[0] = batch;
    let z = g.constant(Tensor::zeros(shape));
    g.add(z, x)
}

/// Two-way softmax over channel pairs of `[.., 2D]` logits → `[.., D]` weights.
pub fn pair_softmax(g: &mut Graph<'_, f64>, logits: Var) -> Result<Var> {
    let s = g.shape(logits).to_vec();
    let two_d = *s.last().ok_or_else(|| invalid("pair_softmax of 0-d tensor"))?;
    if two_d % 2 != 0 {
        return Err(invalid(format!("pair_softmax needs an even width, got {two_d}")));
    }
    let mut pairs = s.clone();
    pairs.pop();
    pairs.extend([two_d / 2, 2]);
    let r = g.reshape(logits, &pairs)?;
    let axis = pairs.len() - 1;
    let sm = g.softmax(r, axis)?;
    let first = g.narrow(sm, axis, 0, 1)?;
    let mut out = s;
    *out.last_mut().unwrap() = two_d / 2;
    g.reshape(first, &out)
}

/// `w ⊙ a + (1 − w) ⊙ b`.
pub fn blend(g: &mut Graph<'_, f64>, w: Var, a: Var, b: Var) -> Result<Var> {
    let wa = g.mul(w, a)?;
    let neg = g.neg(w);
    let inv = g.add_scalar(neg, 1.0);
    let wb = g.mul(inv, b)?;
    g.add(wa, wb)
}

/// Gated fusion of audio and text features with a speaker embedding
/// (`s_id: [B, 1, D]`); returns `(f̄_A, f̄_T)`.
pub fn fuse_features(g: &mut Graph<'_, f64>, gates: &FusionGates, f_a: Var, f_t: Var, s_id: Var) -> Result<(Var, Var)> {
    let (w_a, w_t) = fusion_weights(g, gates, f_a, f_t, s_id)?;
    let bar_t = blend(g, w_t, f_a, f_t)?;
    let bar_a = blend(g, w_a, f_a, f_t)?;
    Ok((bar_a, bar_t))
}

/// Gate weights `(w_A, w_T)`, each in `(0, 1)` elementwise.
pub fn fusion_weights(g: &mut Graph<'_, f64>, gates: &FusionGates, f_a: Var, f_t: Var, s_id: Var) -> Result<(Var, Var)> {
    let a = g.add(f_a, s_id)?;
    let t = g.add(f_t, s_id)?;
    let u = g.concat(&[a, t], 2)?;
    let lt = gates.w_t.forward(g, u)?;
    let la = gates.w_a.forward(g, u)?;
    let w_t = pair_softmax(g, lt)?;
    let w_a = pair_softmax(g, la)?;
    Ok((w_a, w_t))
}

impl Generator {
    pub fn new(cfg: GeneratorConfig, dims: [PartDims; 4]) -> Result<Self> {
        cfg.validate()?;
        let mut rng = SeededRng::new(cfg.seed).fork(0x6E2);
        let mut store = ParamStore::new();
        let d = cfg.dim;
        let acfg = AttentionConfig::new(d, cfg.heads)?;
        let text = TextEncoder::new(&mut store, "text", cfg.vocab, cfg.text_width, d, &mut rng);
        let speaker = Embedding::new(&mut store, "speaker", cfg.speakers, d, &mut rng);
        let queries = store.add("queries", crate::ndiff::nn::uniform(&[cfg.query_len, d], 1.0, &mut rng));
        let query_attn = Attention::new(&mut store, "query_attn", acfg, &mut rng);
        let streams = Stream::ALL.map(|s| {
            let n = s.name();
            let raw = (s == Stream::Face).then_some(cfg.raw_channels);
            let speech_scan = SsmParams::new(&mut store, &format!("{n}.speech_scan"), d, d, cfg.state, &mut rng);
            let query_scan = SsmParams::new(&mut store, &format!("{n}.query_scan"), d, d, cfg.state, &mut rng);
            StreamLayers {
                audio: AudioEncoder::new(&mut store, &format!("{n}.audio"), d, raw, &mut rng),
                gates: FusionGates {
                    w_t: Linear::new(&mut store, &format!("{n}.gate_t"), 2 * d, 2 * d, true, &mut rng),
                    w_a: Linear::new(&mut store, &format!("{n}.gate_a"), 2 * d, 2 * d, true, &mut rng),
                },
                speech_scan,
                query_scan,
                merge: Linear::new(&mut store, &format!("{n}.merge"), 3 * d, d, true, &mut rng),
                refine: Attention::new(&mut store, &format!("{n}.refine"), acfg, &mut rng),
            }
        });
        let mut i = 0;
        let parts = Part::ALL.map(|p| {
            let n = p.name();
            let pd = dims[i];
            i += 1;
            PartLayers {
                part: p,
                dims: pd,
                input: Linear::new(&mut store, &format!("{n}.input"), d, d, true, &mut rng),
                attn: (p != Part::Face).then(|| Attention::new(&mut store, &format!("{n}.attn"), acfg, &mut rng)),
                scan: SsmParams::new(&mut store, &format!("{n}.scan"), d, d, cfg.state, &mut rng),
                latent_head: Linear::zeros(&mut store, &format!("{n}.latent_head"), d, pd.code_dim, true),
                logit_head: Linear::zeros(&mut store, &format!("{n}.logit_head"), d, pd.codebook_size, true),
            }
        });
        let trunk = Linear::new(&mut store, "trunk", d, d, true, &mut rng);
        Ok(Generator { cfg, store, text, speaker, queries, query_attn, streams, parts, trunk })
    }

    pub fn part_dims(&self) -> [PartDims; 4] {
        self.parts.map(|p| p.dims)
    }

    fn stream(&self, s: Stream) -> &StreamLayers {
        &self.streams[s.index()]
    }

    /// Audio features of both streams at latent rate.
    pub fn audio_features(&self, g: &mut Graph<'_, f64>, inp: &BatchInputs) -> Result<[Var; 2]> {
        let env = g.constant(inp.envelope.clone());
        let raw = g.constant(inp.raw.clone());
        let mut out = [env; 2];
        for s in Stream::ALL {
            let f = self.stream(s).audio.forward(g, env, Some(raw), self.cfg.sample_rate, self.cfg.fps)?;
            out[s.index()] = pool_frames(g, f, DOWNSAMPLE)?;
        }
        Ok(out)
    }

    /// Text features at latent rate, `[B, M, D]`.
    pub fn text_features(&self, g: &mut Graph<'_, f64>, inp: &BatchInputs) -> Result<Var> {
        let f = self.text.forward(g, &inp.tokens, inp.batch)?;
        pool_frames(g, f, DOWNSAMPLE)
    }

    /// Speaker rows `[B, 1, D]`.
    pub fn speaker_embedding(&self, g: &mut Graph<'_, f64>, speakers: &[usize]) -> Result<Var> {
        if let Some(&bad) = speakers.iter().find(|&&s| s >= self.cfg.speakers) {
            return Err(invalid(format!("speaker {bad} outside the {} known speakers", self.cfg.speakers)));
        }
        let e = self.speaker.forward(g, speakers)?;
        g.reshape(e, &[speakers.len(), 1, self.cfg.dim])
    }

    /// `f̄_global = mhsa(Q_global)` as `[1, M, D]`; query rows repeat
    /// cyclically when `M` exceeds the stored query count.
    pub fn global_queries(&self, g: &mut Graph<'_, f64>, m: usize) -> Result<Var> {
        let q = g.param(self.queries);
        let idx: Vec<usize> = (0..m).map(|i| i % self.cfg.query_len).collect();
        let rows = g.gather_rows(q, &idx)?;
        let q = g.reshape(rows, &[1, m, self.cfg.dim])?;
        self.query_attn.mhsa(g, q)
    }

    /// `f_speech = mamba([f̄_T, f̄_A])` along the sequence axis,
    /// `f̂_global = mamba(f̄_global)`, and `f_global` the linear merge of
    /// both halves of `f_speech` with `f̂_global` along channels.
    pub fn global_scan(&self, g: &mut Graph<'_, f64>, s: Stream, fused: StreamFeatures, bar_global: Var) -> Result<GlobalOut> {
        let l = self.stream(s);
        let mode = Discretization::Euler;
        let sh = g.shape(fused.f_a).to_vec();
        let (b, m) = (sh[0], sh[1]);
        let seq = g.concat(&[fused.f_t, fused.f_a], 1)?;
        let f_speech = mamba_block(g, seq, &l.speech_scan, mode)?;
        let hat = mamba_block(g, bar_global, &l.query_scan, mode)?;
        let hat = expand(g, hat, b)?;
        let first = g.narrow(f_speech, 1, 0, m)?;
        let second = g.narrow(f_speech, 1, m, m)?;
        let cat = g.concat(&[first, second, hat], 2)?;
        let f_global = l.merge.forward(g, cat)?;
        Ok(GlobalOut { f_global, f_speech })
    }

    /// `f_refine = mhca(f̄_global, [f̄_T, f̄_A])`.
    pub fn refine_queries(&self, g: &mut Graph<'_, f64>, s: Stream, fused: StreamFeatures, bar_global: Var) -> Result<Var> {
        let b = g.shape(fused.f_a)[0];
        let kv = g.concat(&[fused.f_t, fused.f_a], 1)?;
        let q = expand(g, bar_global, b)?;
        self.stream(s).refine.mhca(g, q, kv)
    }

    /// Per-part scans over `f_refine + f_global` of each stream (`inputs`
    /// in [`Stream::ALL`] order). `mask` holds `B·M` flags; masked steps
    /// are zeroed and kept steps scaled by `1/(1 − mask_ratio)` so unmasked
    /// inference sees inputs of the trained magnitude.
    pub fn local_scan(&self, g: &mut Graph<'_, f64>, inputs: [Var; 2], mask: Option<&[bool]>) -> Result<LocalOut> {
        let mut inputs = inputs;
        if let Some(mask) = mask {
            let sh = g.shape(inputs[0]).to_vec();
            if mask.len() != sh[0] * sh[1] {
                return Err(invalid(format!("mask has {} flags for {}×{} steps", mask.len(), sh[0], sh[1])));
            }
            let k = 1.0 / (1.0 - self.cfg.mask_ratio);
            let keep = g.constant(Tensor::new(vec![sh[0], sh[1], 1], mask.iter().map(|&m| if m { 0.0 } else { k }).collect())?);
            for u in &mut inputs {
                *u = g.mul(*u, keep)?;
            }
        }
        let mode = Discretization::Euler;
        let mut tokens = Vec::with_capacity(4);
        let mut paths = Vec::with_capacity(4);
        for p in &self.parts {
            let u = inputs[Stream::of(p.part).index()];
            let a = match &p.attn {
                Some(at) => at.mhsa(g, u)?,
                None => u,
            };
            let t = p.input.forward(g, a)?;
            paths.push(gated_scan(g, t, &p.scan, mode)?);
            tokens.push(t);
        }
        let mut sum = paths[0];
        for &y in &paths[1..] {
            sum = g.add(sum, y)?;
        }
        let mixed = self.trunk.forward(g, sum)?;
        let shared = g.add(mixed, inputs[Stream::Body.index()])?;
        let (mut latents, mut logits) = (Vec::with_capacity(4), Vec::with_capacity(4));
        for (i, p) in self.parts.iter().enumerate() {
            let own = p.scan.proj_out.forward(g, paths[i])?;
            let own = g.add(own, tokens[i])?;
            let h = g.add(own, shared)?;
            latents.push(p.latent_head.forward(g, h)?);
            logits.push(p.logit_head.forward(g, h)?);
        }
        Ok(LocalOut { latents, logits, paths })
    }

    /// Full forward pass from batch inputs to per-part heads.
    pub fn forward(&self, g: &mut Graph<'_, f64>, inp: &BatchInputs, mask: Option<&[bool]>) -> Result<LocalOut> {
        let audio = self.audio_features(g, inp)?;
        let f_t = self.text_features(g, inp)?;
        self.forward_from_features(g, inp, audio, f_t, mask)
    }

    /// Everything after the encoders; `audio` in [`Stream::ALL`] order.
    pub fn forward_from_features(&self, g: &mut Graph<'_, f64>, inp: &BatchInputs, audio: [Var; 2], f_t: Var, mask: Option<&[bool]>) -> Result<LocalOut> {
        let (state, globals) = self.global_stage(g, inp, audio, f_t)?;
        let refs = self.refine_stage(g, &state)?;
        let mut u = refs;
        for i in 0..2 {
            u[i] = g.add(refs[i], globals[i])?;
        }
        self.local_scan(g, u, mask)
    }

    /// Fusion and the global scan of both streams; returns the fused state
    /// and `f_global` per stream.
    pub fn global_stage(&self, g: &mut Graph<'_, f64>, inp: &BatchInputs, audio: [Var; 2], f_t: Var) -> Result<(TrunkState, [Var; 2])> {
        let m = g.shape(f_t)[1];
        let s_id = self.speaker_embedding(g, &inp.speakers)?;
        let bar_global = self.global_queries(g, m)?;
        let mut fused = [StreamFeatures { f_a: f_t, f_t }; 2];
        let mut globals = [f_t; 2];
        for s in Stream::ALL {
            let (bar_a, bar_t) = fuse_features(g, &self.stream(s).gates, audio[s.index()], f_t, s_id)?;
            fused[s.index()] = StreamFeatures { f_a: bar_a, f_t: bar_t };
            globals[s.index()] = self.global_scan(g, s, fused[s.index()], bar_global)?.f_global;
        }
        Ok((TrunkState { fused, bar_global }, globals))
    }

    /// `f_refine` per stream.
    pub fn refine_stage(&self, g: &mut Graph<'_, f64>, state: &TrunkState) -> Result<[Var; 2]> {
        let mut out = [state.bar_global; 2];
        for s in Stream::ALL {
            out[s.index()] = self.refine_queries(g, s, state.fused[s.index()], state.bar_global)?;
        }
        Ok(out)
    }
}

/// Fused speech features and global queries shared by the later stages.
#[derive(Clone, Copy, Debug)]
pub struct TrunkState {
    pub fused: [StreamFeatures; 2],
    /// `[1, M, D]`.
    pub bar_global: Var,
}
