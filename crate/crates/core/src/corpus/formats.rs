//! Binary motion/audio files and plain-text token files.
//!
//! Motion: `MTMO`, version u16, fps u16, T u32, D u32, then `T·D` f32.
//! Audio: `MTAU`, rate u32, length u32, then `length` f32.
//! All little-endian.

use std::path::Path;

use crate::error::{Error, FormatError, Result};
use crate::motion::MotionSequence;

pub const MOTION_MAGIC: [u8; 4] = *b"MTMO";
pub const AUDIO_MAGIC: [u8; 4] = *b"MTAU";
pub const MOTION_VERSION: u16 = 1;

/// Mono audio at `rate` Hz.
#[derive(Clone, Debug, PartialEq)]
pub struct Audio {
    pub rate: u32,
    pub samples: Vec<f32>,
}

impl Audio {
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.rate as f64
    }
}

fn need(bytes: &[u8], expected: usize) -> Result<(), FormatError> {
    if bytes.len() < expected {
        return Err(FormatError::Truncated { expected, actual: bytes.len() });
    }
    Ok(())
}

fn check_magic(bytes: &[u8], expected: [u8; 4]) -> Result<(), FormatError> {
    need(bytes, 4)?;
    let found = [bytes[0], bytes[1], bytes[2], bytes[3]];
    if found != expected {
        return Err(FormatError::MagicMismatch { expected, found });
    }
    Ok(())
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

fn f32s(b: &[u8]) -> impl Iterator<Item = f32> + '_ {
    b.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
}

pub fn encode_motion(m: &MotionSequence) -> Result<Vec<u8>> {
    let fps = u16::try_from(m.fps).map_err(|_| Error::InvalidArgument(format!("fps {} exceeds u16", m.fps)))?;
    let (t, d) = (u32::try_from(m.len), u32::try_from(m.dim));
    let (Ok(t), Ok(d)) = (t, d) else {
        return Err(Error::InvalidArgument("motion too large for the file format".into()));
    };
    let mut out = Vec::with_capacity(16 + m.frames.len() * 4);
    out.extend_from_slice(&MOTION_MAGIC);
    out.extend_from_slice(&MOTION_VERSION.to_le_bytes());
    out.extend_from_slice(&fps.to_le_bytes());
    out.extend_from_slice(&t.to_le_bytes());
    out.extend_from_slice(&d.to_le_bytes());
    for &v in &m.frames {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_motion(bytes: &[u8]) -> Result<MotionSequence> {
    check_magic(bytes, MOTION_MAGIC)?;
    need(bytes, 16)?;
    let version = u16_at(bytes, 4);
    if version != MOTION_VERSION {
        return Err(FormatError::UnsupportedVersion { found: version, supported: MOTION_VERSION }.into());
    }
    let fps = u16_at(bytes, 6) as u32;
    let (t, d) = (u32_at(bytes, 8) as usize, u32_at(bytes, 12) as usize);
    let expected = t
        .checked_mul(d)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(16))
        .ok_or_else(|| FormatError::Malformed(format!("header {t}×{d} overflows")))?;
    need(bytes, expected)?;
    if bytes.len() > expected {
        return Err(FormatError::Malformed(format!("{} trailing bytes", bytes.len() - expected)).into());
    }
    let frames = f32s(&bytes[16..]).map(f64::from).collect();
    MotionSequence::new(frames, t, d, fps)
}

pub fn encode_audio(a: &Audio) -> Result<Vec<u8>> {
    let len = u32::try_from(a.samples.len()).map_err(|_| Error::InvalidArgument("audio too long for the file format".into()))?;
    let mut out = Vec::with_capacity(12 + a.samples.len() * 4);
    out.extend_from_slice(&AUDIO_MAGIC);
    out.extend_from_slice(&a.rate.to_le_bytes());
    out.extend_from_slice(&len.to_le_bytes());
    for &v in &a.samples {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_audio(bytes: &[u8]) -> Result<Audio> {
    check_magic(bytes, AUDIO_MAGIC)?;
    need(bytes, 12)?;
    let rate = u32_at(bytes, 4);
    let len = u32_at(bytes, 8) as usize;
    let expected = 12 + len * 4;
    need(bytes, expected)?;
    if bytes.len() > expected {
        return Err(FormatError::Malformed(format!("{} trailing bytes", bytes.len() - expected)).into());
    }
    Ok(Audio { rate, samples: f32s(&bytes[12..]).collect() })
}

pub fn encode_tokens(tokens: &[usize]) -> String {
    tokens.iter().map(|t| format!("{t}\n")).collect()
}

pub fn decode_tokens(text: &str) -> Result<Vec<usize>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            l.trim().parse().map_err(|_| FormatError::Malformed(format!("token line {}: {l:?} is not a decimal id", n + 1)).into())
        })
        .collect()
}

pub fn write_motion(path: &Path, m: &MotionSequence) -> Result<()> {
    Ok(std::fs::write(path, encode_motion(m)?)?)
}

pub fn read_motion(path: &Path) -> Result<MotionSequence> {
    decode_motion(&std::fs::read(path)?)
}

pub fn write_audio(path: &Path, a: &Audio) -> Result<()> {
    Ok(std::fs::write(path, encode_audio(a)?)?)
}

pub fn read_audio(path: &Path) -> Result<Audio> {
    decode_audio(&std::fs::read(path)?)
}

pub fn write_tokens(path: &Path, tokens: &[usize]) -> Result<()> {
    Ok(std::fs::write(path, encode_tokens(tokens))?)
}

pub fn read_tokens(path: &Path) -> Result<Vec<usize>> {
    decode_tokens(&std::fs::read_to_string(path)?)
}
