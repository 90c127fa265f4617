//! Seeded synthetic corpus of paired audio, tokens and motion, with its
//! on-disk layout `{train,val,test}/clip_{k}.{mtmo,mtau,txt}`.

pub mod formats;
pub mod synth;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

pub use formats::{
    decode_audio, decode_motion, decode_tokens, encode_audio, encode_motion, encode_tokens, read_audio, read_motion, read_tokens, write_audio,
    write_motion, write_tokens, Audio,
};
pub use synth::{synth_clip, SynthClip, World};

use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::motion::MotionSequence;
use crate::rng::SeededRng;

pub const SPEC_FILE: &str = "spec.txt";
pub const MANIFEST_FILE: &str = "manifest.csv";

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusSpec {
    pub seed: u64,
    pub speakers: usize,
    pub clips_per_speaker: usize,
    /// Seconds per clip.
    pub duration: f64,
    pub fps: u32,
    pub sample_rate: u32,
    pub vocab: usize,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec { seed: 0, speakers: 2, clips_per_speaker: 100, duration: 8.0, fps: 30, sample_rate: 16000, vocab: 32 }
    }
}

const SPEC_KEYS: [&str; 7] = ["seed", "speakers", "clips_per_speaker", "duration", "fps", "sample_rate", "vocab"];

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.speakers == 0 || self.clips_per_speaker == 0 {
            return bad("corpus needs at least one speaker and one clip".into());
        }
        if self.vocab < 2 {
            return bad(format!("vocab {} must be at least 2", self.vocab));
        }
        if self.fps == 0 || self.sample_rate == 0 || !(self.duration > 0.0) {
            return bad("fps, sample rate and duration must be positive".into());
        }
        let frames = self.duration * self.fps as f64;
        if (frames - frames.round()).abs() > 1e-9 {
            return bad(format!("duration {} s × {} fps is not a whole number of frames", self.duration, self.fps));
        }
        Ok(())
    }

    pub fn clip_count(&self) -> usize {
        self.speakers * self.clips_per_speaker
    }

    pub fn frames(&self) -> usize {
        (self.duration * self.fps as f64).round() as usize
    }

    pub fn samples(&self) -> usize {
        (self.duration * self.sample_rate as f64).round() as usize
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("seed", self.seed);
        kv.set("speakers", self.speakers);
        kv.set("clips_per_speaker", self.clips_per_speaker);
        kv.set("duration", self.duration);
        kv.set("fps", self.fps);
        kv.set("sample_rate", self.sample_rate);
        kv.set("vocab", self.vocab);
        kv
    }

    /// Missing keys keep their defaults.
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let unknown = kv.unknown_keys(&SPEC_KEYS);
        if !unknown.is_empty() {
            return Err(Error::Config(format!("unknown corpus spec keys: {}", unknown.join(", "))));
        }
        let d = CorpusSpec::default();
        let spec = CorpusSpec {
            seed: kv.get_or("seed", d.seed)?,
            speakers: kv.get_or("speakers", d.speakers)?,
            clips_per_speaker: kv.get_or("clips_per_speaker", d.clips_per_speaker)?,
            duration: kv.get_or("duration", d.duration)?,
            fps: kv.get_or("fps", d.fps)?,
            sample_rate: kv.get_or("sample_rate", d.sample_rate)?,
            vocab: kv.get_or("vocab", d.vocab)?,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| Error::Data(format!("unknown split {s:?}")))
    }
}

/// Train/val/test sizes for `n` clips: `round(0.85n)`, `round(0.075n)`, rest.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = ((n as f64) * 0.85).round() as usize;
    let val = (((n as f64) * 0.075).round() as usize).min(n - train);
    (train, val, n - train - val)
}

/// Split of every clip id in `0..n`, from a seeded permutation.
pub fn assign_splits(n: usize, seed: u64) -> Vec<Split> {
    let mut order: Vec<usize> = (0..n).collect();
    SeededRng::new(seed).fork(0x5B11).shuffle(&mut order);
    let (train, val, _) = split_sizes(n);
    let mut out = vec![Split::Test; n];
    for (rank, &id) in order.iter().enumerate() {
        out[id] = if rank < train {
            Split::Train
        } else if rank < train + val {
            Split::Val
        } else {
            Split::Test
        };
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClipMeta {
    pub id: usize,
    pub speaker: usize,
    pub split: Split,
}

/// A clip loaded from disk.
#[derive(Clone, Debug)]
pub struct Clip {
    pub meta: ClipMeta,
    pub motion: MotionSequence,
    pub audio: Audio,
    pub tokens: Vec<usize>,
}

pub fn clip_stem(dir: &Path, split: Split, id: usize) -> PathBuf {
    dir.join(split.name()).join(format!("clip_{id}"))
}

/// Writes every clip, `spec.txt` and `manifest.csv` under `dir`.
pub fn generate_corpus(spec: &CorpusSpec, dir: &Path) -> Result<Vec<ClipMeta>> {
    spec.validate()?;
    for s in Split::ALL {
        std::fs::create_dir_all(dir.join(s.name()))?;
    }
    let world = World::new(spec);
    let splits = assign_splits(spec.clip_count(), spec.seed);
    let mut metas = Vec::with_capacity(splits.len());
    for (id, &split) in splits.iter().enumerate() {
        let clip = synth_clip(spec, &world, id);
        let stem = clip_stem(dir, split, id);
        write_motion(&stem.with_extension("mtmo"), &clip.motion)?;
        write_audio(&stem.with_extension("mtau"), &clip.audio)?;
        write_tokens(&stem.with_extension("txt"), &clip.tokens)?;
        metas.push(ClipMeta { id, speaker: id / spec.clips_per_speaker, split });
    }
    std::fs::write(dir.join(SPEC_FILE), spec.to_kv().render())?;
    let mut manifest = String::from("clip,split,speaker\n");
    for m in &metas {
        manifest.push_str(&format!("{},{},{}\n", m.id, m.split, m.speaker));
    }
    std::fs::write(dir.join(MANIFEST_FILE), manifest)?;
    Ok(metas)
}

/// All clips of a spec in memory, without the f32 rounding of the files.
pub fn synthesize(spec: &CorpusSpec) -> Result<Vec<Clip>> {
    spec.validate()?;
    let world = World::new(spec);
    let splits = assign_splits(spec.clip_count(), spec.seed);
    Ok(splits
        .iter()
        .enumerate()
        .map(|(id, &split)| {
            let c = synth_clip(spec, &world, id);
            Clip { meta: ClipMeta { id, speaker: id / spec.clips_per_speaker, split }, motion: c.motion, audio: c.audio, tokens: c.tokens }
        })
        .collect())
}

/// An on-disk corpus: its spec and manifest; clips load on demand.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub dir: PathBuf,
    pub spec: CorpusSpec,
    pub clips: Vec<ClipMeta>,
}

impl Corpus {
    pub fn open(dir: &Path) -> Result<Self> {
        let spec_path = dir.join(SPEC_FILE);
        if !spec_path.is_file() {
            return Err(Error::Data(format!("{} is not a corpus (missing {SPEC_FILE})", dir.display())));
        }
        let spec = CorpusSpec::from_kv(&KeyValues::load(&spec_path)?)?;
        let text = std::fs::read_to_string(dir.join(MANIFEST_FILE))?;
        let mut clips = Vec::new();
        for (n, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            let parsed = (fields.len() == 3)
                .then(|| Some((fields[0].parse().ok()?, fields[1].parse().ok()?, fields[2].parse().ok()?)))
                .flatten();
            let (id, split, speaker) = parsed.ok_or_else(|| Error::Data(format!("manifest line {}: {line:?}", n + 1)))?;
            if speaker >= spec.speakers {
                return Err(Error::Data(format!("manifest line {}: speaker {speaker} out of range", n + 1)));
            }
            clips.push(ClipMeta { id, speaker, split });
        }
        Ok(Corpus { dir: dir.to_path_buf(), spec, clips })
    }

    pub fn load(&self, meta: &ClipMeta) -> Result<Clip> {
        let stem = clip_stem(&self.dir, meta.split, meta.id);
        let motion = read_motion(&stem.with_extension("mtmo"))?;
        let audio = read_audio(&stem.with_extension("mtau"))?;
        let tokens = read_tokens(&stem.with_extension("txt"))?;
        if tokens.len() != motion.len {
            return Err(Error::Data(format!("clip {}: {} tokens for {} frames", meta.id, tokens.len(), motion.len)));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= self.spec.vocab) {
            return Err(Error::Data(format!("clip {}: token {bad} outside vocabulary of {}", meta.id, self.spec.vocab)));
        }
        Ok(Clip { meta: meta.clone(), motion, audio, tokens })
    }

    pub fn metas(&self, split: Split) -> impl Iterator<Item = &ClipMeta> {
        self.clips.iter().filter(move |c| c.split == split)
    }

    pub fn load_split(&self, split: Split) -> Result<Vec<Clip>> {
        self.metas(split).map(|m| self.load(m)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forty_clips_split_34_3_3() {
        assert_eq!(split_sizes(40), (34, 3, 3));
        let s = assign_splits(40, 7);
        let count = |p| s.iter().filter(|&&x| x == p).count();
        assert_eq!((count(Split::Train), count(Split::Val), count(Split::Test)), (34, 3, 3));
        assert_eq!(s, assign_splits(40, 7));
    }

    #[test]
    fn spec_validation() {
        assert!(CorpusSpec::default().validate().is_ok());
        assert!(CorpusSpec { duration: 1.01, ..CorpusSpec::default() }.validate().is_err());
        let kv = KeyValues::parse("speakers=3\nbogus=1").unwrap();
        assert!(CorpusSpec::from_kv(&kv).is_err());
        let spec = CorpusSpec { seed: 9, vocab: 12, ..CorpusSpec::default() };
        assert_eq!(CorpusSpec::from_kv(&spec.to_kv()).unwrap(), spec);
    }
}
