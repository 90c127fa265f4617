use gesture_core::corpus::{synthesize, Audio, Clip, CorpusSpec};
use gesture_core::motion::rotation::rot6d_to_matrix;
use gesture_core::motion::{train_vqvae, Part, VqConfig, VqModel, VqTrainConfig, FULL_DIM};
use gesture_core::ndiff::{grad_check, Graph, ParamStore, Tensor, Var};
use gesture_core::ssm::random_tensor;
use gesture_core::synthesis::model::FusionGates;
use gesture_core::synthesis::train::{make_batch, part_dims};
use gesture_core::synthesis::*;
use gesture_core::SeededRng;
use proptest::prelude::*;

fn tone(freq: f64, seconds: f64) -> Audio {
    let rate = 16000;
    let n = (seconds * rate as f64) as usize;
    Audio { rate, samples: (0..n).map(|i| (0.5 * (2.0 * std::f64::consts::PI * freq * i as f64 / rate as f64).sin()) as f32).collect() }
}

#[test]
fn silence_gives_zero_envelope() {
    let a = Audio { rate: 16000, samples: vec![0.0; 16000] };
    let e = envelope_features(&a, 30, 30).unwrap();
    assert_eq!(e.shape(), &[30, ENVELOPE_CHANNELS]);
    assert!(e.data().iter().all(|&v| v == 0.0));
}

#[test]
fn tone_envelope_is_flat() {
    let e = envelope_features(&tone(440.0, 2.0), 60, 30).unwrap();
    for ch in 0..2 {
        let v: Vec<f64> = e.data().chunks(ENVELOPE_CHANNELS).map(|r| r[ch]).collect();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64).sqrt();
        assert!(std / mean < 0.05, "channel {ch}: {}", std / mean);
    }
}

#[test]
fn short_audio_is_rejected() {
    let a = tone(440.0, 0.5);
    assert!(envelope_features(&a, 16, 30).is_err());
    assert!(envelope_features(&a, 15, 30).is_ok());
}

fn small_cfg() -> GeneratorConfig {
    GeneratorConfig { dim: 8, heads: 2, state: 3, text_width: 4, raw_channels: 3, query_len: 4, vocab: 5, speakers: 2, epochs: 2, batch_size: 2, ..GeneratorConfig::default() }
}

fn dims(code_dim: usize, n: usize) -> [PartDims; 4] {
    [PartDims { code_dim, codebook_size: n }; 4]
}

#[test]
fn audio_features_have_requested_frames() {
    let cfg = small_cfg();
    let gen = Generator::new(cfg.clone(), dims(4, 6)).unwrap();
    let a = tone(220.0, 1.0);
    let frames = 28;
    let raw = raw_samples(&a, frames, 30).unwrap();
    let inp = BatchInputs {
        batch: 1,
        frames,
        envelope: envelope_features(&a, frames, 30).unwrap().reshape(vec![1, frames, ENVELOPE_CHANNELS]).unwrap(),
        raw: Tensor::new(vec![1, raw.len(), 1], raw).unwrap(),
        tokens: vec![0; frames],
        speakers: vec![0],
    };
    let mut g = Graph::inference(&gen.store);
    for s in Stream::ALL {
        let l = &gen.streams[s as usize];
        let env = g.constant(inp.envelope.clone());
        let r = g.constant(inp.raw.clone());
        let f = l.audio.forward(&mut g, env, Some(r), 16000, 30).unwrap();
        assert_eq!(g.shape(f), &[1, frames, cfg.dim]);
    }
    assert!(gen.streams[Stream::Face as usize].audio.raw.is_some());
    assert!(gen.streams[Stream::Body as usize].audio.raw.is_none());
    let pooled = gen.audio_features(&mut g, &inp).unwrap();
    assert_eq!(g.shape(pooled[0]), &[1, frames / 4, cfg.dim]);
}

#[test]
fn text_features_are_row_lookups() {
    let gen = Generator::new(small_cfg(), dims(4, 6)).unwrap();
    let mut g = Graph::inference(&gen.store);
    let f = gen.text.forward(&mut g, &[1, 3, 1, 2], 1).unwrap();
    assert_eq!(g.shape(f), &[1, 4, 8]);
    let v = g.value(f).data();
    assert_eq!(v[0..8], v[16..24]);
    assert_ne!(v[0..8], v[8..16]);
    assert!(gen.text.forward(&mut g, &[5], 1).is_err());
}

fn gates(seed: u64, d: usize) -> (ParamStore<f64>, FusionGates) {
    let mut store = ParamStore::new();
    let mut rng = SeededRng::new(seed);
    let gates = FusionGates {
        w_t: gesture_core::ndiff::nn::Linear::new(&mut store, "t", 2 * d, 2 * d, true, &mut rng),
        w_a: gesture_core::ndiff::nn::Linear::new(&mut store, "a", 2 * d, 2 * d, true, &mut rng),
    };
    (store, gates)
}

#[test]
fn equal_streams_pass_through() {
    let (store, gt) = gates(1, 3);
    let v = random_tensor::<f64>(&[2, 4, 3], -2.0, 2.0, &mut SeededRng::new(2));
    let s = random_tensor::<f64>(&[2, 1, 3], -1.0, 1.0, &mut SeededRng::new(3));
    let mut g = Graph::with_params(&store);
    let (a, t, sv) = (g.constant(v.clone()), g.constant(v.clone()), g.constant(s));
    let (ba, bt) = fuse_features(&mut g, &gt, a, t, sv).unwrap();
    assert!(g.value(ba).max_abs_diff(&v) < 1e-12);
    assert!(g.value(bt).max_abs_diff(&v) < 1e-12);
}

#[test]
fn unit_gate_selects_audio_exactly() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(random_tensor(&[1, 3, 2], -5.0, 5.0, &mut SeededRng::new(4)));
    let t = g.constant(random_tensor(&[1, 3, 2], -5.0, 5.0, &mut SeededRng::new(5)));
    let w = g.constant(Tensor::full(vec![1, 3, 2], 1.0));
    let out = blend(&mut g, w, a, t).unwrap();
    assert_eq!(g.value(out), g.value(a));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn gates_open_and_outputs_convex(seed in 0u64..10_000, scale in 0.1f64..30.0) {
        let (store, gt) = gates(seed, 4);
        let mut rng = SeededRng::new(seed + 1);
        let fa = random_tensor::<f64>(&[2, 3, 4], -scale, scale, &mut rng);
        let ft = random_tensor::<f64>(&[2, 3, 4], -scale, scale, &mut rng);
        let s = random_tensor::<f64>(&[2, 1, 4], -1.0, 1.0, &mut rng);
        let mut g = Graph::with_params(&store);
        let (a, t, sv) = (g.constant(fa.clone()), g.constant(ft.clone()), g.constant(s));
        let (wa, wt) = fusion_weights(&mut g, &gt, a, t, sv).unwrap();
        // A logit gap past ~37 rounds the larger weight to exactly 1.
        for w in [wa, wt] {
            prop_assert!(g.value(w).data().iter().all(|&x| (0.0..=1.0).contains(&x)));
        }
        let (ba, bt) = fuse_features(&mut g, &gt, a, t, sv).unwrap();
        for out in [ba, bt] {
            for ((&o, &x), &y) in g.value(out).data().iter().zip(fa.data()).zip(ft.data()) {
                prop_assert!(o >= x.min(y) - 1e-12 && o <= x.max(y) + 1e-12);
            }
        }
    }
}

#[test]
fn fusion_gradients() {
    let (store, gt) = gates(7, 3);
    let ids: Vec<_> = store.ids().collect();
    let mut rng = SeededRng::new(8);
    let mut inputs = vec![
        random_tensor::<f64>(&[2, 3, 3], -1.0, 1.0, &mut rng),
        random_tensor::<f64>(&[2, 3, 3], -1.0, 1.0, &mut rng),
        random_tensor::<f64>(&[2, 1, 3], -1.0, 1.0, &mut rng),
    ];
    inputs.extend(ids.iter().map(|&id| store.get(id).clone()));
    let w = random_tensor::<f64>(&[2, 3, 3], -1.0, 1.0, &mut rng);
    let err = grad_check(
        |g, v| {
            g.bind_params(ids.iter().copied().zip(v[3..].iter().copied()));
            let (ba, bt) = fuse_features(g, &gt, v[0], v[1], v[2])?;
            let wv = g.constant(w.clone());
            let p = g.mul(ba, wv)?;
            let q = g.square(bt);
            let s = g.add(p, q)?;
            Ok(g.sum(s))
        },
        &inputs,
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

fn random_batch(cfg: &GeneratorConfig, batch: usize, frames: usize, seed: u64) -> BatchInputs {
    let mut rng = SeededRng::new(seed);
    let s = (frames as f64 * 16000.0 / 30.0).round() as usize;
    BatchInputs {
        batch,
        frames,
        envelope: random_tensor(&[batch, frames, ENVELOPE_CHANNELS], 0.0, 1.0, &mut rng),
        raw: random_tensor(&[batch, s, 1], -0.3, 0.3, &mut rng),
        tokens: (0..batch * frames).map(|_| rng.below(cfg.vocab)).collect(),
        speakers: (0..batch).map(|_| rng.below(cfg.speakers)).collect(),
    }
}

fn fused(gen: &Generator, g: &mut Graph<'_, f64>, inp: &BatchInputs) -> (StreamFeatures, Var) {
    let audio = gen.audio_features(g, inp).unwrap();
    let f_t = gen.text_features(g, inp).unwrap();
    let s_id = gen.speaker_embedding(g, &inp.speakers).unwrap();
    let (ba, bt) = fuse_features(g, &gen.streams[1].gates, audio[1], f_t, s_id).unwrap();
    let m = g.shape(f_t)[1];
    let q = gen.global_queries(g, m).unwrap();
    (StreamFeatures { f_a: ba, f_t: bt }, q)
}

#[test]
fn global_scan_shapes_and_query_gradient() {
    let cfg = small_cfg();
    let gen = Generator::new(cfg.clone(), dims(4, 6)).unwrap();
    let inp = random_batch(&cfg, 2, 16, 1);
    let mut g = Graph::with_params(&gen.store);
    let (f, q) = fused(&gen, &mut g, &inp);
    let out = gen.global_scan(&mut g, Stream::Body, f, q).unwrap();
    assert_eq!(g.shape(out.f_speech), &[2, 8, 8]);
    assert_eq!(g.shape(out.f_global), &[2, 4, 8]);
    let w = g.constant(random_tensor(&[2, 4, 8], -1.0, 1.0, &mut SeededRng::new(2)));
    let p = g.mul(out.f_global, w).unwrap();
    let loss = g.sum(p);
    g.backward(loss).unwrap();
    let grads = g.param_grads();
    let gq = grads.get(gen.queries).expect("query gradient");
    assert!(gq.data().iter().any(|&v| v != 0.0));
}

#[test]
fn global_queries_ignore_speech() {
    let cfg = small_cfg();
    let gen = Generator::new(cfg.clone(), dims(4, 6)).unwrap();
    let mut vals = Vec::new();
    for seed in [1, 2] {
        let inp = random_batch(&cfg, 1, 16, seed);
        let mut g = Graph::inference(&gen.store);
        let (_, q) = fused(&gen, &mut g, &inp);
        vals.push(g.value(q).clone());
    }
    assert_eq!(vals[0], vals[1]);
}

/// Multi-head cross-attention with residual, straight from the definition.
fn attention_oracle(store: &ParamStore<f64>, at: &gesture_core::attention::Attention, q: &[f64], kv: &[f64], mq: usize, mk: usize) -> Vec<f64> {
    let d = at.cfg.dim;
    let lin = |l: &gesture_core::ndiff::nn::Linear, x: &[f64], rows: usize| -> Vec<f64> {
        let w = store.get(l.weight).data();
        let b = store.get(l.bias.unwrap()).data();
        let mut out = vec![0.0; rows * d];
        for r in 0..rows {
            for o in 0..d {
                out[r * d + o] = b[o] + (0..d).map(|i| w[o * d + i] * x[r * d + i]).sum::<f64>();
            }
        }
        out
    };
    let (qp, kp, vp) = (lin(&at.wq, q, mq), lin(&at.wk, kv, mk), lin(&at.wv, kv, mk));
    let (h, dh) = (at.cfg.heads, at.cfg.head_dim());
    let mut o = vec![0.0; mq * d];
    for hi in 0..h {
        for i in 0..mq {
            let scores: Vec<f64> =
                (0..mk).map(|j| (0..dh).map(|c| qp[i * d + hi * dh + c] * kp[j * d + hi * dh + c]).sum::<f64>() / (dh as f64).sqrt()).collect();
            let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
            let z: f64 = e.iter().sum();
            for c in 0..dh {
                o[i * d + hi * dh + c] = (0..mk).map(|j| e[j] / z * vp[j * d + hi * dh + c]).sum();
            }
        }
    }
    let mut out = lin(&at.wo, &o, mq);
    for (x, r) in out.iter_mut().zip(q) {
        *x += r;
    }
    out
}

#[test]
fn refine_matches_oracle() {
    let cfg = small_cfg();
    let gen = Generator::new(cfg.clone(), dims(4, 6)).unwrap();
    let inp = random_batch(&cfg, 1, 16, 3);
    let mut g = Graph::inference(&gen.store);
    let (f, q) = fused(&gen, &mut g, &inp);
    let r = gen.refine_queries(&mut g, Stream::Body, f, q).unwrap();
    assert_eq!(g.shape(r), &[1, 4, 8]);
    let kv = g.concat(&[f.f_t, f.f_a], 1).unwrap();
    let want = attention_oracle(&gen.store, &gen.streams[1].refine, g.value(q).data(), g.value(kv).data(), 4, 8);
    let err = g.value(r).data().iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err < 1e-10, "{err}");
}

#[test]
fn single_key_gets_full_weight() {
    let cfg = small_cfg();
    let gen = Generator::new(cfg, dims(4, 6)).unwrap();
    let mut g = Graph::inference(&gen.store);
    let q = g.constant(random_tensor(&[1, 5, 8], -1.0, 1.0, &mut SeededRng::new(1)));
    let kv = g.constant(random_tensor(&[1, 1, 8], -1.0, 1.0, &mut SeededRng::new(2)));
    let out = gen.streams[0].refine.cross(&mut g, q, kv).unwrap();
    assert!(g.value(out.weights).data().iter().all(|&w| (w - 1.0).abs() < 1e-15));
}

#[test]
fn zero_inputs_give_zero_latents_and_uniform_codes() {
    let cfg = small_cfg();
    let d = [
        PartDims { code_dim: 3, codebook_size: 5 },
        PartDims { code_dim: 4, codebook_size: 6 },
        PartDims { code_dim: 5, codebook_size: 7 },
        PartDims { code_dim: 6, codebook_size: 8 },
    ];
    let gen = Generator::new(cfg, d).unwrap();
    let mut g = Graph::inference(&gen.store);
    let z = g.constant(Tensor::zeros(vec![2, 6, 8]));
    let out = gen.local_scan(&mut g, [z, z], None).unwrap();
    for (i, pd) in d.iter().enumerate() {
        assert_eq!(g.shape(out.latents[i]), &[2, 6, pd.code_dim]);
        assert!(g.value(out.latents[i]).data().iter().all(|&v| v == 0.0));
        let p = g.softmax(out.logits[i], 2).unwrap();
        let u = 1.0 / pd.codebook_size as f64;
        assert!(g.value(p).data().iter().all(|&v| (v - u).abs() < 1e-15));
    }
}

#[test]
fn masking_is_causal_in_the_scan_path() {
    let cfg = small_cfg();
    let gen = Generator::new(cfg, dims(4, 6)).unwrap();
    let x = random_tensor::<f64>(&[1, 10, 8], -1.0, 1.0, &mut SeededRng::new(9));
    let run = |mask: &[bool]| {
        let mut g = Graph::inference(&gen.store);
        let xv = g.constant(x.clone());
        let out = gen.local_scan(&mut g, [xv, xv], Some(mask)).unwrap();
        g.value(out.paths[0]).clone()
    };
    let base = run(&[false; 10]);
    for step in [0, 4, 9] {
        let mut mask = [false; 10];
        mask[step] = true;
        let y = run(&mask);
        for t in 0..10 {
            let diff = (0..8).map(|c| (y.data()[t * 8 + c] - base.data()[t * 8 + c]).abs()).fold(0.0, f64::max);
            if t < step {
                assert_eq!(diff, 0.0, "step {step} changed t={t}");
            } else if t == step {
                assert!(diff > 0.0);
            }
        }
    }
}

fn targets_from(g: &Graph<'_, f64>, out: &LocalOut) -> Targets {
    Targets {
        latents: out.latents.iter().map(|&v| g.value(v).clone()).collect(),
        indices: out.logits.iter().map(|&v| vec![0; g.value(v).numel() / g.shape(v)[2]]).collect(),
    }
}

#[test]
fn loss_terms() {
    let cfg = GeneratorConfig { dim: 8, heads: 2, state: 3, text_width: 4, raw_channels: 3, query_len: 4, vocab: 5, ..GeneratorConfig::default() };
    let gen = Generator::new(cfg.clone(), dims(4, 256)).unwrap();
    let mut g = Graph::inference(&gen.store);
    let z = g.constant(Tensor::zeros(vec![1, 3, 8]));
    let out = gen.local_scan(&mut g, [z, z], None).unwrap();
    let t = targets_from(&g, &out);
    let (loss, terms) = generator_loss(&mut g, &out, &t, &cfg).unwrap();
    for p in &terms.parts {
        assert_eq!(p.rec, 0.0);
        assert!((p.cls - 256f64.ln()).abs() < 1e-12);
    }
    // Face is weighted α = 0: only three classification terms count.
    assert!((g.value(loss).item() - 3.0 * 256f64.ln()).abs() < 1e-12);
    assert!((terms.weighted_sum(&cfg) - terms.total).abs() < 1e-12);
}

#[test]
fn loss_decomposes_and_has_exact_gradients() {
    let cfg = small_cfg();
    let mut rng = SeededRng::new(3);
    let lat: Vec<Tensor<f64>> = (0..4).map(|_| random_tensor(&[2, 3, 3], -1.0, 1.0, &mut rng)).collect();
    let logit: Vec<Tensor<f64>> = (0..4).map(|_| random_tensor(&[2, 3, 5], -2.0, 2.0, &mut rng)).collect();
    let targets = Targets {
        latents: (0..4).map(|_| random_tensor(&[2, 3, 3], -1.0, 1.0, &mut rng)).collect(),
        indices: (0..4).map(|_| (0..6).map(|_| rng.below(5)).collect()).collect(),
    };
    let mut inputs = lat.clone();
    inputs.extend(logit.iter().cloned());
    let f = |g: &mut Graph<'_, f64>, v: &[Var]| {
        let out = LocalOut { latents: v[..4].to_vec(), logits: v[4..].to_vec(), paths: vec![] };
        Ok(generator_loss(g, &out, &targets, &cfg)?.0)
    };
    let err = grad_check(f, &inputs, 1e-6).unwrap();
    assert!(err < 1e-4, "{err}");
    let mut g = Graph::<f64>::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = LocalOut { latents: vars[..4].to_vec(), logits: vars[4..].to_vec(), paths: vec![] };
    let (_, terms) = generator_loss(&mut g, &out, &targets, &cfg).unwrap();
    assert!((terms.total - terms.weighted_sum(&cfg)).abs() < 1e-12);
}

fn tiny_world() -> (Vec<Clip>, Vec<VqModel>) {
    let spec = CorpusSpec { seed: 5, speakers: 2, clips_per_speaker: 2, duration: 2.0, vocab: 6, ..CorpusSpec::default() };
    let clips = synthesize(&spec).unwrap();
    let motions: Vec<_> = clips.iter().map(|c| c.motion.clone()).collect();
    let vcfg = VqConfig { codebook_size: 8, code_dim: 4, hidden: 8, vel_acc: true };
    let tcfg = VqTrainConfig { epochs: 1, batches_per_epoch: 1, batch_size: 2, window: 16, ..VqTrainConfig::default() };
    let vqs = Part::ALL.iter().map(|&p| train_vqvae(p, &motions, vcfg.clone(), &tcfg).unwrap().0).collect();
    (clips, vqs)
}

fn tiny_gen_cfg() -> GeneratorConfig {
    GeneratorConfig { vocab: 6, query_len: 15, ..small_cfg() }
}

#[test]
fn stage2_training_is_deterministic_and_leaves_stage1_alone() {
    let (clips, vqs) = tiny_world();
    let before: Vec<u64> = vqs.iter().map(|m| m.store.checksum()).collect();
    let ex = prepare_examples(&clips, &vqs, 30).unwrap();
    let cfg = tiny_gen_cfg();
    let (g1, l1) = train_stage2(&ex, &vqs, &cfg).unwrap();
    let (g2, l2) = train_stage2(&ex, &vqs, &cfg).unwrap();
    assert_eq!(l1, l2);
    assert_eq!(g1.store.checksum(), g2.store.checksum());
    let after: Vec<u64> = vqs.iter().map(|m| m.store.checksum()).collect();
    assert_eq!(before, after);
    assert_eq!(l1.epochs.len(), 2);
    for e in &l1.epochs {
        assert!(e.total.is_finite());
    }
    let ev = evaluate_stage2(&g1, &ex).unwrap();
    assert!(ev.parts.iter().all(|p| (0.0..=1.0).contains(&p.accuracy)));
}

#[test]
fn missing_stage1_part_is_a_checkpoint_error() {
    let (clips, mut vqs) = tiny_world();
    vqs.retain(|m| m.part != Part::Hands);
    let err = prepare_examples(&clips, &vqs, 30).unwrap_err();
    assert!(matches!(err, gesture_core::Error::Checkpoint(_)));
}

#[test]
fn generation_contract() {
    let (clips, vqs) = tiny_world();
    let ex = prepare_examples(&clips, &vqs, 30).unwrap();
    let (gen, _) = train_stage2(&ex, &vqs, &tiny_gen_cfg()).unwrap();
    let c = &clips[0];
    let (m1, times) = generate(&gen, &vqs, &c.audio, &c.tokens, c.meta.speaker).unwrap();
    let (m2, _) = generate(&gen, &vqs, &c.audio, &c.tokens, c.meta.speaker).unwrap();
    assert_eq!(m1, m2);
    assert_eq!(m1.len, 60);
    assert_eq!(m1.dim, FULL_DIM);
    for f in m1.frames.chunks(FULL_DIM) {
        for j in 0..55 {
            rot6d_to_matrix(&f[6 * j..6 * j + 6]).unwrap();
        }
    }
    assert!(times.total > 0.0 && times.decoders.iter().all(|&t| t >= 0.0));
    // A 1.9 s request yields the largest whole number of latent steps.
    let short = Audio { rate: 16000, samples: c.audio.samples[..30400].to_vec() };
    let (m3, _) = generate(&gen, &vqs, &short, &c.tokens, 0).unwrap();
    assert_eq!(m3.len, 56);
}

#[test]
fn checkpoints_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (clips, vqs) = tiny_world();
    let ex = prepare_examples(&clips, &vqs, 30).unwrap();
    let (gen, _) = train_stage2(&ex, &vqs, &tiny_gen_cfg()).unwrap();
    let p = dir.path().join("gen.mtg2");
    gen.save(&p).unwrap();
    let back = Generator::load(&p).unwrap();
    assert_eq!(back.cfg, gen.cfg);
    assert_eq!(back.store.checksum(), gen.store.checksum());
    let q = dir.path().join("upper.mtvq");
    vqs[1].save(&q).unwrap();
    let vb = VqModel::load(&q).unwrap();
    assert_eq!(vb.part, Part::Upper);
    assert_eq!(vb.store.checksum(), vqs[1].store.checksum());
    assert!(matches!(VqModel::load(&p), Err(gesture_core::Error::Checkpoint(_))));
    assert!(matches!(Generator::load(&dir.path().join("none")), Err(gesture_core::Error::Checkpoint(_))));
    let (b, _) = make_batch(&ex.iter().collect::<Vec<_>>(), &part_dims(&vqs).unwrap()).unwrap();
    assert_eq!(b.batch, clips.len());
}
