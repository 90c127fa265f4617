//! Synthetic paired clips.
//!
//! Each clip is a sequence of "words": a click marks the start of every
//! word, the word's token sets its length and the pose the body moves
//! towards. Poses follow a smoothstep from one word target to the next,
//! so joint speed vanishes at the clicks and motion beats line up with
//! audio onsets. Weight shift (foot contacts, root sway) follows the same
//! word schedule.

use super::formats::Audio;
use super::CorpusSpec;
use crate::motion::layout::{CONTACT_START, FACE_CHANNELS, FACE_START, FULL_DIM, HAND_JOINTS, NUM_JOINTS, TRANS_START, UPPER_JOINTS};
use crate::motion::rotation::{axis_angle_to_matrix, matrix_to_rot6d};
use crate::motion::MotionSequence;
use crate::rng::SeededRng;

const SUCCESSORS: usize = 3;
const SYLLABLE_DECAY: f64 = 0.18;
const CLICK_DECAY: f64 = 0.002;
const CLICK_SPAN: f64 = 0.012;

/// Tables shared by every clip of a corpus.
#[derive(Clone, Debug)]
pub struct World {
    /// Likely successors and their cumulative probabilities per token.
    successors: Vec<[(usize, f64); SUCCESSORS]>,
    /// Word length multiplier per token.
    pub tempo: Vec<f64>,
    /// Syllable loudness per token.
    loudness: Vec<f64>,
    /// Axis-angle target per token and joint.
    poses: Vec<Vec<[f64; 3]>>,
    /// Face coefficient target per token.
    expressions: Vec<Vec<f64>>,
    /// Weight shift per token in [−1, 1]; drives contacts and root sway.
    stance: Vec<f64>,
    mouth: Vec<f64>,
    speakers: Vec<Speaker>,
}

#[derive(Clone, Debug)]
struct Speaker {
    /// Base word length in seconds.
    period: f64,
    jitter: f64,
    /// Lower edge of the carrier band; the upper edge is 16× higher.
    band_hz: f64,
    offset: Vec<[f64; 3]>,
    sway_hz: f64,
    sway_amp: f64,
}

fn joint_amplitude(j: usize) -> f64 {
    if UPPER_JOINTS.contains(&j) {
        0.45
    } else if HAND_JOINTS.contains(&j) {
        0.35
    } else if j == 22 {
        0.12
    } else {
        0.06
    }
}

impl World {
    pub fn new(spec: &CorpusSpec) -> Self {
        let mut rng = SeededRng::new(spec.seed).fork(0xC0);
        let v = spec.vocab;
        let successors = (0..v)
            .map(|tok| {
                let mut w = [0.0; SUCCESSORS];
                for x in &mut w {
                    *x = rng.uniform(0.2, 1.0);
                }
                let total: f64 = w.iter().sum();
                let mut acc = 0.0;
                let mut out = [(0, 0.0); SUCCESSORS];
                for (k, slot) in out.iter_mut().enumerate() {
                    acc += w[k] / total;
                    // Never the token itself, so every word moves the pose.
                    *slot = ((tok + 1 + rng.below(v - 1)) % v, acc);
                }
                out[SUCCESSORS - 1].1 = 1.0;
                out
            })
            .collect();
        let tempo = (0..v).map(|_| rng.uniform(0.7, 1.4)).collect();
        let loudness = (0..v).map(|_| rng.uniform(0.6, 1.0)).collect();
        let poses = (0..v)
            .map(|_| {
                (0..NUM_JOINTS)
                    .map(|j| {
                        let a = joint_amplitude(j);
                        [rng.uniform(-a, a), rng.uniform(-a, a), rng.uniform(-a, a)]
                    })
                    .collect()
            })
            .collect();
        let expressions = (0..v)
            .map(|_| (0..FACE_CHANNELS).map(|k| rng.uniform(-0.5, 0.5) / (1.0 + k as f64 / 10.0)).collect())
            .collect();
        let stance = (0..v).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let mouth = (0..FACE_CHANNELS).map(|k| if k < 6 { rng.uniform(0.5, 1.0) } else { 0.0 }).collect();
        let speakers = (0..spec.speakers)
            .map(|_| Speaker {
                period: rng.uniform(0.45, 0.65),
                jitter: rng.uniform(0.05, 0.12),
                band_hz: rng.uniform(180.0, 360.0),
                offset: (0..NUM_JOINTS).map(|_| [rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1)]).collect(),
                sway_hz: rng.uniform(0.2, 0.4),
                sway_amp: rng.uniform(0.02, 0.04),
            })
            .collect();
        World { successors, tempo, loudness, poses, expressions, stance, mouth, speakers }
    }

    fn next_token(&self, tok: usize, rng: &mut SeededRng) -> usize {
        let u = rng.uniform(0.0, 1.0);
        self.successors[tok].iter().find(|(_, c)| u < *c).map_or(self.successors[tok][SUCCESSORS - 1].0, |s| s.0)
    }
}

/// One generated clip before it is written to disk.
#[derive(Clone, Debug)]
pub struct SynthClip {
    pub motion: MotionSequence,
    pub audio: Audio,
    /// Token id per motion frame.
    pub tokens: Vec<usize>,
    /// Word onsets in seconds.
    pub clicks: Vec<f64>,
}

fn smoothstep(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * (3.0 - 2.0 * s)
}

/// Index of the word active at time `t` (the first word before any click).
fn word_at(clicks: &[f64], t: f64) -> usize {
    clicks.partition_point(|&c| c <= t).saturating_sub(1)
}

pub fn synth_clip(spec: &CorpusSpec, world: &World, clip_id: usize) -> SynthClip {
    let speaker = clip_id / spec.clips_per_speaker;
    let sp = &world.speakers[speaker];
    let mut rng = SeededRng::new(crate::rng::mix(spec.seed) ^ crate::rng::mix(0xC11F_0000 + clip_id as u64));
    let n_frames = spec.frames();
    let n_samples = spec.samples();
    let duration = spec.duration;

    // Words.
    let mut words = vec![rng.below(spec.vocab)];
    let mut clicks = vec![rng.uniform(0.05, 0.25)];
    loop {
        let tok = *words.last().unwrap();
        let len = (sp.period * world.tempo[tok] * (1.0 + sp.jitter * rng.normal())).clamp(0.25, 1.2);
        let next = clicks.last().unwrap() + len;
        if next >= duration {
            break;
        }
        clicks.push(next);
        words.push(world.next_token(tok, &mut rng));
    }
    let start_tok = rng.below(spec.vocab);
    let word_end = |k: usize| if k + 1 < clicks.len() { clicks[k + 1] } else { duration };

    // Smooth per-joint wander on top of the word poses.
    let phase: Vec<[f64; 3]> = (0..NUM_JOINTS).map(|_| [rng.uniform(0.0, 6.3), rng.uniform(0.0, 6.3), rng.uniform(0.0, 6.3)]).collect();
    let mut drift = vec![[0.0f64; 3]; NUM_JOINTS];
    let sway_phase = rng.uniform(0.0, 6.3);

    let mut audio_env = vec![0.0; n_frames];
    let mut frames = vec![0.0; n_frames * FULL_DIM];
    let mut tokens = Vec::with_capacity(n_frames);
    for t in 0..n_frames {
        let time = t as f64 / spec.fps as f64;
        let (from, to, s) = if time < clicks[0] {
            (start_tok, start_tok, 0.0)
        } else {
            let k = word_at(&clicks, time);
            let prev = if k == 0 { start_tok } else { words[k - 1] };
            (prev, words[k], smoothstep((time - clicks[k]) / (word_end(k) - clicks[k])))
        };
        tokens.push(if time < clicks[0] { words[0] } else { to });
        audio_env[t] = syllable_envelope(world, &clicks, &words, time);
        let f = &mut frames[t * FULL_DIM..(t + 1) * FULL_DIM];
        let sway = world.stance[from] + (world.stance[to] - world.stance[from]) * s;
        for j in 0..NUM_JOINTS {
            let amp = sp.sway_amp * joint_amplitude(j) / 0.45;
            let mut w = [0.0; 3];
            for c in 0..3 {
                drift[j][c] = 0.95 * drift[j][c] + 0.05 * rng.normal();
                let a = world.poses[from][j][c];
                let b = world.poses[to][j][c];
                w[c] = a + (b - a) * s
                    + sp.offset[j][c]
                    + amp * (std::f64::consts::TAU * sp.sway_hz * 0.5 * time + phase[j][c]).sin()
                    + 0.1 * amp * drift[j][c];
            }
            if j == 22 {
                w[0] += 0.15 * audio_env[t];
            }
            f[j * 6..j * 6 + 6].copy_from_slice(&matrix_to_rot6d(&axis_angle_to_matrix(w)));
        }
        for k in 0..FACE_CHANNELS {
            let a = world.expressions[from][k];
            let b = world.expressions[to][k];
            f[FACE_START + k] = a + (b - a) * s + world.mouth[k] * audio_env[t];
        }
        f[CONTACT_START] = f64::from(u8::from(sway > -0.3));
        f[CONTACT_START + 1] = f64::from(u8::from(sway > -0.5));
        f[CONTACT_START + 2] = f64::from(u8::from(sway < 0.3));
        f[CONTACT_START + 3] = f64::from(u8::from(sway < 0.5));
        f[TRANS_START] = 0.04 * sway;
        f[TRANS_START + 1] = 0.9 + 0.005 * (2.0 * sway).cos();
        f[TRANS_START + 2] = 0.01 * (std::f64::consts::TAU * sp.sway_hz * 0.5 * time + sway_phase).cos();
    }
    let motion = MotionSequence::new(frames, n_frames, FULL_DIM, spec.fps).expect("frame buffer sized above");
    let samples = synth_audio(spec, world, sp, &clicks, &words, n_samples, &mut rng);
    SynthClip { motion, audio: Audio { rate: spec.sample_rate, samples }, tokens, clicks }
}

fn syllable_envelope(world: &World, clicks: &[f64], words: &[usize], time: f64) -> f64 {
    if time < clicks[0] {
        return 0.0;
    }
    let k = word_at(clicks, time);
    let lo = k.saturating_sub(1);
    (lo..=k)
        .map(|i| {
            let tau = time - clicks[i];
            world.loudness[words[i]] * (1.0 - (-tau / 0.01).exp()) * (-tau / SYLLABLE_DECAY).exp()
        })
        .sum()
}

fn synth_audio(spec: &CorpusSpec, world: &World, sp: &Speaker, clicks: &[f64], words: &[usize], n: usize, rng: &mut SeededRng) -> Vec<f32> {
    let rate = spec.sample_rate as f64;
    // White noise through a one-pole high-pass and a one-pole low-pass.
    let hp = (-std::f64::consts::TAU * sp.band_hz / rate).exp();
    let lp = (-std::f64::consts::TAU * 16.0 * sp.band_hz / rate).exp();
    let (mut prev_in, mut hp_out, mut lp_out) = (0.0f64, 0.0f64, 0.0f64);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let time = i as f64 / rate;
        let x = rng.normal();
        hp_out = hp * (hp_out + x - prev_in);
        prev_in = x;
        lp_out = lp * lp_out + (1.0 - lp) * hp_out;
        let env = syllable_envelope(world, clicks, words, time);
        let mut v = 0.3 * lp_out * env + 0.002 * rng.normal();
        let k = word_at(clicks, time);
        let tau = time - clicks[k];
        if (0.0..CLICK_SPAN).contains(&tau) {
            v += 0.8 * (-tau / CLICK_DECAY).exp() * if rng.bernoulli(0.5) { 1.0 } else { -1.0 };
        }
        out.push(v.clamp(-1.0, 1.0) as f32);
    }
    out
}
