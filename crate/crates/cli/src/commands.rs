//! Subcommands other than `bench`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use gesture_core::config::KeyValues;
use gesture_core::corpus::{self, Clip, Corpus, CorpusSpec, Split};
use gesture_core::metrics::{self, audio_beats, beat_constancy, motion_beats, ExtractorConfig, FeatureExtractor};
use gesture_core::motion::{
    codebook_utilization, mean_abs_acceleration, train_vqvae as fit_vqvae, MotionSequence, Part, Stage1Config, VqModel, DOWNSAMPLE, FULL_DIM,
};
use gesture_core::synthesis::{self, evaluate_stage2, prepare_examples, train_stage2, Generator, GeneratorConfig, ModuleTimes};
use gesture_core::{Error, Result};
use serde_json::json;

use crate::report::{load_config, sha256_file, write_config, Report};
use crate::{EvaluateArgs, GenCorpusArgs, GenerateArgs, TrainGenArgs, TrainVqArgs};

pub const GENERATOR_FILE: &str = "generator.mtg2";

pub fn vq_path(dir: &Path, part: Part) -> PathBuf {
    dir.join(format!("{part}.mtvq"))
}

fn parse_split(s: &str) -> Result<Split> {
    s.parse().map_err(|_| Error::Config(format!("unknown split {s:?} (train, val or test)")))
}

fn held_out(corpus: &Corpus) -> Result<Vec<Clip>> {
    let mut clips = corpus.load_split(Split::Val)?;
    clips.extend(corpus.load_split(Split::Test)?);
    Ok(clips)
}

pub fn gen_corpus(a: &GenCorpusArgs, seed: Option<u64>) -> Result<()> {
    let kv = load_config(a.spec.as_deref(), seed)?;
    let spec = CorpusSpec::from_kv(&kv)?;
    let t = Instant::now();
    let metas = corpus::generate_corpus(&spec, &a.out)?;
    let resolved = spec.to_kv();
    let mut r = Report::new("gen-corpus", &resolved);
    r.set("clips", metas.len());
    for s in Split::ALL {
        r.set(&format!("clips.{s}"), metas.iter().filter(|m| m.split == s).count());
    }
    r.set("frames_per_clip", spec.frames());
    r.set("samples_per_clip", spec.samples());
    r.time("seconds", t.elapsed().as_secs_f64());
    let path = a.out.join("report.json");
    r.write(&path)?;
    println!("wrote {} clips ({} frames each) to {}", metas.len(), spec.frames(), a.out.display());
    Ok(())
}

pub fn train_vqvae(a: &TrainVqArgs, seed: Option<u64>) -> Result<()> {
    let kv = load_config(a.config.as_deref(), seed)?;
    let cfg = Stage1Config::from_kv(&kv)?;
    let corpus = Corpus::open(&a.corpus)?;
    let train: Vec<MotionSequence> = corpus.load_split(Split::Train)?.into_iter().map(|c| c.motion).collect();
    let t = Instant::now();
    let (model, log) = fit_vqvae(a.part, &train, cfg.model.clone(), &cfg.train)?;
    let seconds = t.elapsed().as_secs_f64();
    std::fs::create_dir_all(&a.out)?;
    model.save(&vq_path(&a.out, a.part))?;

    let mut csv = String::from("epoch,lr,rec,recon,translation,contact,vel,acc,codebook,commit,total,utilization\n");
    for e in &log.epochs {
        let x = &e.terms;
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            e.epoch, e.lr, x.rec, x.recon(), x.translation, x.contact, x.vel, x.acc, x.codebook, x.commit, x.total, e.utilization
        ));
    }
    std::fs::write(a.out.join(format!("{}_log.csv", a.part)), csv)?;

    let first = log.epochs.first().map_or(f64::NAN, |e| e.terms.recon());
    let last = log.epochs.last().map_or(f64::NAN, |e| e.terms.recon());
    let held: Vec<MotionSequence> = held_out(&corpus)?.iter().map(|c| c.motion.part(a.part)).collect::<Result<_>>()?;
    let window = held.iter().map(|m| m.len).min().unwrap_or(0) / DOWNSAMPLE * DOWNSAMPLE;
    let train_slices: Vec<MotionSequence> = train.iter().map(|m| m.part(a.part)).collect::<Result<_>>()?;
    let util = codebook_utilization(&model, &train_slices, window.max(DOWNSAMPLE))?;
    let (mut acc_rec, mut acc_data) = (0.0, 0.0);
    for m in &held {
        let w = m.window(0, window);
        acc_rec += mean_abs_acceleration(&model.reconstruct(&w)?);
        acc_data += mean_abs_acceleration(&w);
    }
    let n = held.len().max(1) as f64;

    let mut r = Report::new("train-vqvae", &kv);
    r.set("part", a.part.name());
    r.set("epochs", log.epochs.len());
    r.set("recon_epoch1", first);
    r.set("recon_final", last);
    r.set("recon_ratio", last / first);
    r.set("utilization_final_epoch", log.epochs.last().map_or(0.0, |e| e.utilization));
    r.set("utilization_train_set", util);
    r.set("heldout_mean_abs_acc_recon", acc_rec / n);
    r.set("heldout_mean_abs_acc_data", acc_data / n);
    r.set("checkpoint_sha256", sha256_file(&vq_path(&a.out, a.part))?);
    r.time("train_seconds", seconds);
    let path = a.out.join(format!("{}_report.json", a.part));
    write_config(&path, &cfg.to_kv())?;
    r.write(&path)?;
    println!(
        "{}: recon {:.4} -> {:.4} (ratio {:.3}), utilization {:.2}, {:.1}s",
        a.part,
        first,
        last,
        last / first,
        util,
        seconds
    );
    Ok(())
}

fn load_vqs(dir: &Path) -> Result<Vec<VqModel>> {
    Part::ALL.iter().map(|&p| VqModel::load(&vq_path(dir, p))).collect()
}

pub fn train_gen(a: &TrainGenArgs, seed: Option<u64>) -> Result<()> {
    let kv = load_config(a.config.as_deref(), seed)?;
    let cfg = GeneratorConfig::from_kv(&kv)?;
    let corpus = Corpus::open(&a.corpus)?;
    if corpus.spec.vocab > cfg.vocab || corpus.spec.speakers > cfg.speakers {
        return Err(Error::Config(format!(
            "corpus has {} tokens and {} speakers; generator config allows {} and {}",
            corpus.spec.vocab, corpus.spec.speakers, cfg.vocab, cfg.speakers
        )));
    }
    let files_before: Vec<String> = Part::ALL.iter().map(|&p| sha256_file(&vq_path(&a.vq_dir, p))).collect::<Result<_>>().map_err(|e| match e {
        Error::Io(io) => Error::Checkpoint(format!("{}: {io}", a.vq_dir.display())),
        other => other,
    })?;
    let vqs = load_vqs(&a.vq_dir)?;
    let sums_before: Vec<u64> = vqs.iter().map(|m| m.store.checksum()).collect();
    let train = prepare_examples(&corpus.load_split(Split::Train)?, &vqs, cfg.fps)?;
    let held = prepare_examples(&held_out(&corpus)?, &vqs, cfg.fps)?;
    let t = Instant::now();
    let (gen, log) = train_stage2(&train, &vqs, &cfg)?;
    let seconds = t.elapsed().as_secs_f64();
    let eval = evaluate_stage2(&gen, &held)?;
    let sums_after: Vec<u64> = vqs.iter().map(|m| m.store.checksum()).collect();
    let files_after: Vec<String> = Part::ALL.iter().map(|&p| sha256_file(&vq_path(&a.vq_dir, p))).collect::<Result<_>>()?;
    std::fs::create_dir_all(&a.out)?;
    gen.save(&a.out.join(GENERATOR_FILE))?;

    let mut csv = String::from("epoch,total");
    for p in Part::ALL {
        csv.push_str(&format!(",{p}.cls,{p}.rec,{p}.accuracy"));
    }
    csv.push('\n');
    for (i, e) in log.epochs.iter().enumerate() {
        csv.push_str(&format!("{i},{}", e.total));
        for p in &e.parts {
            csv.push_str(&format!(",{},{},{}", p.cls, p.rec, p.accuracy));
        }
        csv.push('\n');
    }
    std::fs::write(a.out.join("generator_log.csv"), csv)?;

    let resolved = cfg.to_kv();
    let mut r = Report::new("train-gen", &resolved);
    r.set("train_clips", train.len());
    r.set("heldout_clips", held.len());
    for (i, p) in Part::ALL.iter().enumerate() {
        let d = gen.parts[i].dims;
        r.set(&format!("{p}.heldout_accuracy"), eval.parts[i].accuracy);
        r.set(&format!("{p}.chance"), 1.0 / d.codebook_size as f64);
        r.set(&format!("{p}.heldout_cls"), eval.parts[i].cls);
        r.set(&format!("{p}.heldout_rec"), eval.parts[i].rec);
        r.set(&format!("{p}.target_variance"), eval.target_var[i]);
    }
    r.set("final_train_loss", log.epochs.last().map_or(f64::NAN, |e| e.total));
    r.set("stage1_checksums_before", json!(sums_before));
    r.set("stage1_checksums_after", json!(sums_after));
    r.set("stage1_files_unchanged", files_before == files_after);
    r.set("stage1_frozen", sums_before == sums_after && files_before == files_after);
    r.set("checkpoint_sha256", sha256_file(&a.out.join(GENERATOR_FILE))?);
    r.time("train_seconds", seconds);
    let path = a.out.join("generator_report.json");
    write_config(&path, &resolved)?;
    r.write(&path)?;
    println!("stage 2: {} epochs in {:.1}s", log.epochs.len(), seconds);
    for (i, p) in Part::ALL.iter().enumerate() {
        println!(
            "  {p:<6} held-out accuracy {:.3}  latent loss {:.4} (target variance {:.4})",
            eval.parts[i].accuracy, eval.parts[i].rec, eval.target_var[i]
        );
    }
    Ok(())
}

pub fn load_models(dir: &Path) -> Result<(Generator, Vec<VqModel>)> {
    Ok((Generator::load(&dir.join(GENERATOR_FILE))?, load_vqs(dir)?))
}

fn times_into(r: &mut Report, prefix: &str, t: &ModuleTimes) {
    r.time(&format!("{prefix}audio"), t.audio);
    r.time(&format!("{prefix}text"), t.text);
    r.time(&format!("{prefix}global"), t.global);
    r.time(&format!("{prefix}local"), t.local);
    for (i, p) in Part::ALL.iter().enumerate() {
        r.time(&format!("{prefix}decoder.{p}"), t.decoders[i]);
    }
    r.time(&format!("{prefix}total"), t.total);
}

pub fn generate(a: &GenerateArgs) -> Result<()> {
    let (gen, vqs) = load_models(&a.models)?;
    let mut kv = KeyValues::new();
    kv.set("generator_sha256", sha256_file(&a.models.join(GENERATOR_FILE))?);
    if let (Some(audio), Some(tokens)) = (&a.audio, &a.tokens) {
        if a.speaker >= gen.cfg.speakers {
            return Err(Error::Config(format!("speaker {} outside the generator's {} speakers", a.speaker, gen.cfg.speakers)));
        }
        let audio = corpus::read_audio(audio)?;
        let tokens = corpus::read_tokens(tokens)?;
        let (motion, times) = synthesis::generate(&gen, &vqs, &audio, &tokens, a.speaker)?;
        if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        corpus::write_motion(&a.out, &motion)?;
        kv.set("speaker", a.speaker);
        let mut r = Report::new("generate", &kv);
        r.set("frames", motion.len);
        r.set("motion_sha256", sha256_file(&a.out)?);
        times_into(&mut r, "", &times);
        let path = a.out.with_extension("report.json");
        write_config(&path, &kv)?;
        r.write(&path)?;
        println!("wrote {} frames to {} in {:.3}s", motion.len, a.out.display(), times.total);
        return Ok(());
    }
    let corpus_dir = a.corpus.as_ref().ok_or_else(|| Error::Config("give --audio/--tokens or --corpus".into()))?;
    let split = parse_split(&a.split)?;
    let corpus = Corpus::open(corpus_dir)?;
    std::fs::create_dir_all(&a.out)?;
    kv.set("split", split);
    let mut r = Report::new("generate", &kv);
    let mut sum = ModuleTimes::default();
    let mut count = 0;
    let mut frames = 0;
    for meta in corpus.metas(split) {
        let clip = corpus.load(meta)?;
        let (motion, times) = synthesis::generate(&gen, &vqs, &clip.audio, &clip.tokens, clip.meta.speaker)?;
        let path = a.out.join(format!("clip_{}.mtmo", meta.id));
        corpus::write_motion(&path, &motion)?;
        r.set(&format!("clip_{}.sha256", meta.id), sha256_file(&path)?);
        sum.audio += times.audio;
        sum.text += times.text;
        sum.global += times.global;
        sum.local += times.local;
        for i in 0..4 {
            sum.decoders[i] += times.decoders[i];
        }
        sum.total += times.total;
        count += 1;
        frames += motion.len;
    }
    r.set("clips", count);
    r.set("frames", frames);
    times_into(&mut r, "sum.", &sum);
    let path = a.out.join("report.json");
    write_config(&path, &kv)?;
    r.write(&path)?;
    println!("generated {count} clips ({frames} frames) into {} in {:.1}s", a.out.display(), sum.total);
    Ok(())
}

const EXTRACTOR_KEYS: &[&str] = &["latent", "hidden", "window", "epochs", "batches_per_epoch", "batch_size", "lr", "seed", "bc_sigma"];

fn extractor_config(kv: &KeyValues) -> Result<(ExtractorConfig, f64)> {
    let unknown = kv.unknown_keys(EXTRACTOR_KEYS);
    if !unknown.is_empty() {
        return Err(Error::Config(format!("unknown evaluation keys: {}", unknown.join(", "))));
    }
    let d = ExtractorConfig::default();
    let cfg = ExtractorConfig {
        latent: kv.get_or("latent", d.latent)?,
        hidden: kv.get_or("hidden", d.hidden)?,
        window: kv.get_or("window", d.window)?,
        epochs: kv.get_or("epochs", d.epochs)?,
        batches_per_epoch: kv.get_or("batches_per_epoch", d.batches_per_epoch)?,
        batch_size: kv.get_or("batch_size", d.batch_size)?,
        lr: kv.get_or("lr", d.lr)?,
        seed: kv.get_or("seed", d.seed)?,
    };
    Ok((cfg, kv.get_or("bc_sigma", metrics::DEFAULT_BC_SIGMA)?))
}

fn extractor_kv(c: &ExtractorConfig, sigma: f64) -> KeyValues {
    let mut kv = KeyValues::new();
    kv.set("latent", c.latent);
    kv.set("hidden", c.hidden);
    kv.set("window", c.window);
    kv.set("epochs", c.epochs);
    kv.set("batches_per_epoch", c.batches_per_epoch);
    kv.set("batch_size", c.batch_size);
    kv.set("lr", c.lr);
    kv.set("seed", c.seed);
    kv.set("bc_sigma", sigma);
    kv
}

/// Generated clip `id` in `dir`, or in `dir/<split>/` for a corpus layout.
fn find_generated(dir: &Path, split: Split, id: usize) -> Result<MotionSequence> {
    let flat = dir.join(format!("clip_{id}.mtmo"));
    let nested = corpus::clip_stem(dir, split, id).with_extension("mtmo");
    let path = if flat.is_file() { flat } else { nested };
    if !path.is_file() {
        return Err(Error::Data(format!("no generated motion for clip {id} in {}", dir.display())));
    }
    corpus::read_motion(&path)
}

fn mean_bc(clips: &[(MotionSequence, &Clip)], sigma: f64) -> Result<(f64, usize)> {
    let mut total = 0.0;
    let mut n = 0;
    for (m, c) in clips {
        let (g, au) = (motion_beats(m), audio_beats(&c.audio));
        if g.is_empty() || au.is_empty() {
            continue;
        }
        total += beat_constancy(&g, &au, sigma)?;
        n += 1;
    }
    Ok((if n == 0 { f64::NAN } else { total / n as f64 }, n))
}

pub fn evaluate(a: &EvaluateArgs, seed: Option<u64>) -> Result<()> {
    let kv = load_config(a.config.as_deref(), seed)?;
    let (ecfg, sigma) = extractor_config(&kv)?;
    let split = parse_split(&a.split)?;
    let corpus = Corpus::open(&a.corpus)?;
    let truth = corpus.load_split(split)?;
    if truth.len() < 2 {
        return Err(Error::Data(format!("split {split} has {} clips; evaluation needs 2", truth.len())));
    }
    let mut pairs = Vec::with_capacity(truth.len());
    for c in &truth {
        let g = find_generated(&a.generated, split, c.meta.id)?;
        if g.dim != FULL_DIM || g.len > c.motion.len || g.len < DOWNSAMPLE {
            return Err(Error::Data(format!("clip {}: generated motion is {}×{}, ground truth {}×{}", c.meta.id, g.len, g.dim, c.motion.len, c.motion.dim)));
        }
        pairs.push((g, c));
    }
    let len = pairs.iter().map(|(g, _)| g.len).min().unwrap_or(0);
    let gen: Vec<MotionSequence> = pairs.iter().map(|(g, _)| g.window(0, len)).collect();
    let real: Vec<MotionSequence> = pairs.iter().map(|(_, c)| c.motion.window(0, len)).collect();

    let t = Instant::now();
    let train: Vec<MotionSequence> = corpus.load_split(Split::Train)?.into_iter().map(|c| c.motion).collect();
    let mut fe = FeatureExtractor::new(FULL_DIM, ecfg.clone());
    fe.train(&train)?;
    let fe_l1 = fe.reconstruction_l1(&real)?;
    let fe_seconds = t.elapsed().as_secs_f64();
    let fgd = metrics::fgd(&fe.features_all(&real)?, &fe.features_all(&gen)?)?;
    let bc_pairs: Vec<(MotionSequence, &Clip)> = gen.iter().cloned().zip(pairs.iter().map(|(_, c)| *c)).collect();
    let (bc, bc_n) = mean_bc(&bc_pairs, sigma)?;
    let real_pairs: Vec<(MotionSequence, &Clip)> = real.iter().cloned().zip(pairs.iter().map(|(_, c)| *c)).collect();
    let (bc_real, _) = mean_bc(&real_pairs, sigma)?;
    let div = metrics::diversity(&gen)?;
    let div_real = metrics::diversity(&real)?;
    let (mut mse, mut lvd) = (0.0, 0.0);
    for (g, r) in gen.iter().zip(&real) {
        let (gf, rf) = (metrics::face_channels(g)?, metrics::face_channels(r)?);
        mse += metrics::vertex_mse(&rf, &gf)?;
        lvd += metrics::lvd(&rf, &gf)?;
    }
    let n = gen.len() as f64;

    let resolved = extractor_kv(&ecfg, sigma);
    let mut r = Report::new("evaluate", &resolved);
    r.set("split", split.name());
    r.set("clips", gen.len());
    r.set("frames", len);
    r.set("fgd", fgd);
    r.set("bc", bc);
    r.set("bc_clips", bc_n);
    r.set("bc_ground_truth", bc_real);
    r.set("diversity", div);
    r.set("diversity_ground_truth", div_real);
    r.set("face_mse", mse / n);
    r.set("face_lvd", lvd / n);
    r.set("extractor_l1", fe_l1);
    r.set("corpus_channel_std", metrics::mean_channel_std(&real));
    r.time("extractor_seconds", fe_seconds);
    write_config(&a.report, &resolved)?;
    r.write(&a.report)?;
    println!("FGD {fgd:.6}  BC {bc:.4} (ground truth {bc_real:.4})  diversity {div:.4} (ground truth {div_real:.4})");
    println!("face MSE {:.6}  LVD {:.6}  over {} clips", mse / n, lvd / n, gen.len());
    Ok(())
}
