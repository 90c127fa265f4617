//! Gesture beats, audio onsets and beat constancy.

use crate::corpus::Audio;
use crate::error::{invalid, Result};
use crate::motion::layout::{Part, FULL_DIM};
use crate::motion::MotionSequence;

pub const DEFAULT_BC_SIGMA: f64 = 0.1;
/// Envelope frame length in samples (10 ms at 16 kHz).
pub const ONSET_HOP: usize = 160;
pub const ONSET_K: f64 = 3.0;
/// RMS window in samples (40 ms at 16 kHz).
pub const ONSET_WINDOW: usize = 640;
/// Hops either side an onset must dominate (50 ms).
pub const ONSET_SPAN: usize = 5;
/// Added to the RMS before the log so silence stays finite.
pub const ONSET_FLOOR: f64 = 1e-3;

/// Strictly increasing times in seconds.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BeatSet(Vec<f64>);

impl BeatSet {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.windows(2).any(|w| !(w[0] < w[1])) || times.iter().any(|t| !t.is_finite()) {
            return Err(invalid("beat times must be finite and strictly increasing"));
        }
        Ok(BeatSet(times))
    }

    pub fn times(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Per-frame speed: mean over joints of the L2 norm of the Rot6D change
/// from the previous frame. Full-body input uses the upper-body joints;
/// any other layout is read as consecutive 6-channel joints. Entry 0 is
/// copied from entry 1.
pub fn speed_curve(m: &MotionSequence) -> Vec<f64> {
    let channels: Vec<usize> = if m.dim == FULL_DIM { Part::Upper.channels() } else { (0..m.dim).collect() };
    let mut speed = vec![0.0; m.len];
    if m.len < 2 || channels.is_empty() {
        return speed;
    }
    let joints: Vec<&[usize]> = channels.chunks(6).collect();
    for t in 1..m.len {
        let (a, b) = (m.frame(t - 1), m.frame(t));
        let s: f64 = joints.iter().map(|j| j.iter().map(|&c| (b[c] - a[c]).powi(2)).sum::<f64>().sqrt()).sum();
        speed[t] = s / joints.len() as f64;
    }
    speed[0] = speed[1];
    speed
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Strict local minima of the speed curve below its median, at `t / fps`.
pub fn motion_beats(m: &MotionSequence) -> BeatSet {
    let speed = speed_curve(m);
    if speed.len() < 3 {
        return BeatSet::default();
    }
    let med = median(&speed);
    let times = (1..speed.len() - 1)
        .filter(|&t| speed[t] < speed[t - 1] && speed[t] < speed[t + 1] && speed[t] < med)
        .map(|t| t as f64 / m.fps as f64)
        .collect();
    BeatSet(times)
}

/// Onsets from the log RMS envelope (40 ms windows ending one hop after
/// each point of a 10 ms grid): peaks of its half-wave rectified difference that exceed
/// `median + 3·MAD` and are the largest within ±50 ms. Each onset is timed
/// at its hop.
pub fn audio_beats(audio: &Audio) -> BeatSet {
    let s = &audio.samples;
    let frames = s.len().div_ceil(ONSET_HOP);
    if frames < 2 {
        return BeatSet::default();
    }
    let env: Vec<f64> = (0..frames)
        .map(|i| {
            let lo = ((i + 1) * ONSET_HOP).saturating_sub(ONSET_WINDOW);
            let hi = ((i + 1) * ONSET_HOP).min(s.len());
            let w = &s[lo..hi];
            let rms = (w.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>() / w.len() as f64).sqrt();
            (ONSET_FLOOR + rms).ln()
        })
        .collect();
    let mut diff = vec![0.0; frames];
    for i in 1..frames {
        diff[i] = (env[i] - env[i - 1]).max(0.0);
    }
    let med = median(&diff);
    let mad = median(&diff.iter().map(|d| (d - med).abs()).collect::<Vec<_>>());
    let thr = med + ONSET_K * mad;
    let times = (1..frames)
        .filter(|&i| {
            let lo = i.saturating_sub(ONSET_SPAN);
            let hi = (i + ONSET_SPAN + 1).min(frames);
            diff[i] > thr && (lo..hi).all(|j| j == i || (j < i && diff[j] <= diff[i]) || (j > i && diff[j] < diff[i]))
        })
        .map(|i| (i * ONSET_HOP) as f64 / audio.rate as f64)
        .collect();
    BeatSet(times)
}

/// Mean over gesture beats of `exp(−d²/(2σ²))`, `d` the distance to the
/// nearest audio beat.
pub fn beat_constancy(gesture: &BeatSet, audio: &BeatSet, sigma: f64) -> Result<f64> {
    if gesture.is_empty() || audio.is_empty() {
        return Err(invalid("beat constancy is undefined for an empty beat set"));
    }
    if !(sigma > 0.0) {
        return Err(invalid(format!("beat constancy sigma must be positive, got {sigma}")));
    }
    let a = audio.times();
    let total: f64 = gesture
        .times()
        .iter()
        .map(|&g| {
            let i = a.partition_point(|&x| x < g);
            let mut d = f64::INFINITY;
            if i < a.len() {
                d = d.min(a[i] - g);
            }
            if i > 0 {
                d = d.min(g - a[i - 1]);
            }
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .sum();
    Ok(total / gesture.len() as f64)
}
