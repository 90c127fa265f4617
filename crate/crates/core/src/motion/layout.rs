//! Channel layout of a full-body frame and its split into body parts.
//!
//! A frame is 55 joints × Rot6D (330), then 100 face coefficients,
//! 4 foot contacts and 3 root translations: 437 channels.

use std::fmt;
use std::str::FromStr;

use crate::error::{invalid, Error, Result};

pub const NUM_JOINTS: usize = 55;
pub const ROT_CHANNELS: usize = NUM_JOINTS * 6;
pub const FACE_CHANNELS: usize = 100;
pub const CONTACT_CHANNELS: usize = 4;
pub const TRANS_CHANNELS: usize = 3;
pub const FACE_START: usize = ROT_CHANNELS;
pub const CONTACT_START: usize = FACE_START + FACE_CHANNELS;
pub const TRANS_START: usize = CONTACT_START + CONTACT_CHANNELS;
pub const FULL_DIM: usize = TRANS_START + TRANS_CHANNELS;

/// Torso, neck, head, collars, arms and wrists.
pub const UPPER_JOINTS: [usize; 13] = [3, 6, 9, 12, 13, 14, 15, 16, 17, 18, 19, 20, 21];
/// Pelvis, legs and feet, plus jaw and eyes.
pub const LOWER_JOINTS: [usize; 12] = [0, 1, 2, 4, 5, 7, 8, 10, 11, 22, 23, 24];
/// Fingers of both hands.
pub const HAND_JOINTS: [usize; 30] = [
    25, 26, 27, 28, 29, 30, 31, 32, 33, 34, 35, 36, 37, 38, 39, 40, 41, 42, 43, 44, 45, 46, 47, 48, 49, 50, 51, 52, 53, 54,
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Part {
    Face,
    Upper,
    Hands,
    Lower,
}

impl Part {
    pub const ALL: [Part; 4] = [Part::Face, Part::Upper, Part::Hands, Part::Lower];
    pub const BODY: [Part; 3] = [Part::Upper, Part::Hands, Part::Lower];

    pub fn name(self) -> &'static str {
        match self {
            Part::Face => "face",
            Part::Upper => "upper",
            Part::Hands => "hands",
            Part::Lower => "lower",
        }
    }

    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn from_tag(tag: u8) -> Option<Part> {
        Part::ALL.get(tag as usize).copied()
    }

    pub fn joints(self) -> &'static [usize] {
        match self {
            Part::Face => &[],
            Part::Upper => &UPPER_JOINTS,
            Part::Hands => &HAND_JOINTS,
            Part::Lower => &LOWER_JOINTS,
        }
    }

    /// Number of Rot6D channels at the start of the part slice.
    pub fn rot_channels(self) -> usize {
        self.joints().len() * 6
    }

    pub fn has_contacts(self) -> bool {
        self == Part::Lower
    }

    /// Full-frame channel indices, in the order used by the part slice:
    /// rotations first, then contacts and translation (lower) or the face.
    pub fn channels(self) -> Vec<usize> {
        let mut out: Vec<usize> = self.joints().iter().flat_map(|&j| 6 * j..6 * j + 6).collect();
        match self {
            Part::Face => out.extend(FACE_START..CONTACT_START),
            Part::Lower => out.extend(CONTACT_START..FULL_DIM),
            _ => {}
        }
        out
    }

    pub fn dim(self) -> usize {
        match self {
            Part::Face => FACE_CHANNELS,
            Part::Lower => self.rot_channels() + CONTACT_CHANNELS + TRANS_CHANNELS,
            _ => self.rot_channels(),
        }
    }

    /// Local channel range of the contact labels, if the part has them.
    pub fn contact_range(self) -> Option<std::ops::Range<usize>> {
        self.has_contacts().then(|| self.rot_channels()..self.rot_channels() + CONTACT_CHANNELS)
    }

    /// Local channel range of the root translation, if the part has it.
    pub fn translation_range(self) -> Option<std::ops::Range<usize>> {
        self.has_contacts().then(|| {
            let s = self.rot_channels() + CONTACT_CHANNELS;
            s..s + TRANS_CHANNELS
        })
    }
}

impl fmt::Display for Part {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Part {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Part::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| invalid(format!("unknown part {s:?} (expected face, upper, hands or lower)")))
    }
}

/// `T × D` frames, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionSequence {
    pub frames: Vec<f64>,
    pub len: usize,
    pub dim: usize,
    pub fps: u32,
}

impl MotionSequence {
    pub fn new(frames: Vec<f64>, len: usize, dim: usize, fps: u32) -> Result<Self> {
        if frames.len() != len * dim {
            return Err(invalid(format!("motion: {} values for {len}×{dim} frames", frames.len())));
        }
        Ok(MotionSequence { frames, len, dim, fps })
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.frames[t * self.dim..(t + 1) * self.dim]
    }

    pub fn duration(&self) -> f64 {
        self.len as f64 / self.fps as f64
    }

    /// Frames `[start, start + len)`.
    pub fn window(&self, start: usize, len: usize) -> MotionSequence {
        MotionSequence { frames: self.frames[start * self.dim..(start + len) * self.dim].to_vec(), len, dim: self.dim, fps: self.fps }
    }

    /// Part slice of a full-body sequence.
    pub fn part(&self, part: Part) -> Result<MotionSequence> {
        if self.dim != FULL_DIM {
            return Err(invalid(format!("part split needs {FULL_DIM}-channel frames, got {}", self.dim)));
        }
        let ch = part.channels();
        let mut frames = Vec::with_capacity(self.len * ch.len());
        for t in 0..self.len {
            let f = self.frame(t);
            frames.extend(ch.iter().map(|&c| f[c]));
        }
        Ok(MotionSequence { frames, len: self.len, dim: ch.len(), fps: self.fps })
    }

    /// Reassembles a full-body sequence from the four part slices.
    pub fn merge(parts: &[(Part, MotionSequence)]) -> Result<MotionSequence> {
        let first = parts.first().ok_or_else(|| invalid("merge of zero parts"))?;
        let (len, fps) = (first.1.len, first.1.fps);
        let mut frames = vec![0.0; len * FULL_DIM];
        let mut covered = vec![false; FULL_DIM];
        for (part, seq) in parts {
            let ch = part.channels();
            if seq.len != len || seq.dim != ch.len() {
                return Err(invalid(format!("merge: {part} slice is {}×{}, expected {len}×{}", seq.len, seq.dim, ch.len())));
            }
            for t in 0..len {
                for (k, &c) in ch.iter().enumerate() {
                    frames[t * FULL_DIM + c] = seq.frames[t * seq.dim + k];
                }
            }
            for &c in &ch {
                covered[c] = true;
            }
        }
        if covered.iter().any(|c| !c) {
            return Err(invalid("merge: parts do not cover every channel"));
        }
        MotionSequence::new(frames, len, FULL_DIM, fps)
    }
}
