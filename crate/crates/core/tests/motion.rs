//! Rotations, quantization, the straight-through path and the stage-1 loss.

use gesture_core::motion::layout::{Part, FULL_DIM};
use gesture_core::motion::rotation::{axis_angle_to_matrix, det3, geodesic_angle, matmul3, rot6d_to_matrix, transpose, Mat3, GEODESIC_EPS};
use gesture_core::motion::{codebook_utilization, quantize, train_vqvae, vq_loss, MotionSequence, VqConfig, VqModel, VqTrainConfig};
use gesture_core::ndiff::{grad_check, Graph, Tensor, Var};
use gesture_core::{Result, SeededRng};
use proptest::prelude::*;

fn rand_t(shape: &[usize], rng: &mut SeededRng, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.uniform(lo, hi))
}

fn probe(g: &mut Graph<'_, f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = SeededRng::new(seed ^ 0x77);
    let w = g.constant(rand_t(g.shape(y), &mut rng, -1.0, 1.0));
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

fn random_rot6d(rng: &mut SeededRng, n: usize) -> Vec<f64> {
    (0..n)
        .flat_map(|_| {
            let w = [rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)];
            let m = axis_angle_to_matrix(w);
            [m[0][0], m[1][0], m[2][0], m[0][1], m[1][1], m[2][1]]
        })
        .collect()
}

fn small_cfg() -> VqConfig {
    VqConfig { codebook_size: 16, code_dim: 4, hidden: 8, vel_acc: true }
}

/// Angle between two axis-angle rotations through unit quaternions.
fn quaternion_angle(w1: [f64; 3], w2: [f64; 3]) -> f64 {
    let quat = |w: [f64; 3]| {
        let th = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
        let s = (th / 2.0).sin() / th;
        [(th / 2.0).cos(), w[0] * s, w[1] * s, w[2] * s]
    };
    let (a, b) = (quat(w1), quat(w2));
    let dot: f64 = (0..4).map(|i| a[i] * b[i]).sum();
    2.0 * dot.abs().min(1.0).acos()
}

fn max_dev_from_identity(r: &Mat3) -> f64 {
    let p = matmul3(&transpose(r), r);
    let mut m: f64 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            m = m.max((p[i][j] - if i == j { 1.0 } else { 0.0 }).abs());
        }
    }
    m
}

proptest! {
    #[test]
    fn rot6d_gives_proper_rotations(v in prop::array::uniform6(-3.0f64..3.0)) {
        let a1 = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        let cross = [v[1] * v[5] - v[2] * v[4], v[2] * v[3] - v[0] * v[5], v[0] * v[4] - v[1] * v[3]];
        let c = (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt();
        prop_assume!(a1 > 1e-3 && c > 1e-3);
        let r = rot6d_to_matrix(&v).unwrap();
        prop_assert!(max_dev_from_identity(&r) < 1e-10);
        prop_assert!((det3(&r) - 1.0).abs() < 1e-10);
        let scaled: Vec<f64> = v.iter().map(|x| x * 5.0).collect();
        let r5 = rot6d_to_matrix(&scaled).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                prop_assert!((r[i][j] - r5[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn geodesic_in_range(a in prop::array::uniform3(-4.0f64..4.0), b in prop::array::uniform3(-4.0f64..4.0)) {
        let ang = geodesic_angle(&axis_angle_to_matrix(a), &axis_angle_to_matrix(b));
        prop_assert!((0.0..=std::f64::consts::PI).contains(&ang));
    }

    #[test]
    fn encode_decode_restores_length(quarter in 1usize..17) {
        let t = quarter * 4;
        let model = VqModel::new(Part::Upper, small_cfg(), 3);
        let mut g = Graph::inference(&model.store);
        let x = g.constant(Tensor::zeros(vec![2, t, Part::Upper.dim()]));
        let z = model.encode(&mut g, x).unwrap();
        prop_assert_eq!(g.shape(z), &[2, quarter, 4]);
        let y = model.decode(&mut g, z).unwrap();
        prop_assert_eq!(g.shape(y), &[2, t, Part::Upper.dim()]);
    }
}

#[test]
fn geodesic_matches_quaternion_oracle() {
    let mut rng = SeededRng::new(11);
    let mut checked = 0;
    while checked < 200 {
        let a = [rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)];
        let b = [rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)];
        let want = quaternion_angle(a, b);
        // The arccos clamp only matters within ~1e-3 of 0 and π.
        if want < 0.01 || want > std::f64::consts::PI - 0.01 {
            continue;
        }
        let got = geodesic_angle(&axis_angle_to_matrix(a), &axis_angle_to_matrix(b));
        assert!((got - want).abs() < 1e-8, "{got} vs {want}");
        checked += 1;
    }
}

#[test]
fn identical_rotations_sit_at_the_clamp_floor() {
    let r = axis_angle_to_matrix([0.3, -0.2, 0.9]);
    let floor = (1.0 - GEODESIC_EPS).acos();
    assert!((geodesic_angle(&r, &r) - floor).abs() < 1e-9);
    assert!(floor < 1.5e-3);
}

#[test]
fn encode_rejects_ragged_length() {
    let model = VqModel::new(Part::Face, small_cfg(), 0);
    let mut g = Graph::inference(&model.store);
    let x = g.constant(Tensor::zeros(vec![1, 10, Part::Face.dim()]));
    let err = model.encode(&mut g, x).unwrap_err().to_string();
    assert!(err.contains("pad by 2 frames"), "{err}");
}

#[test]
fn quantize_matches_brute_force() {
    for seed in 0..20 {
        let mut rng = SeededRng::new(seed);
        let z = rand_t(&[2, 5, 8], &mut rng, -1.0, 1.0);
        let cb = rand_t(&[64, 8], &mut rng, -1.0, 1.0);
        let (q, idx) = quantize(&z, &cb).unwrap();
        for (r, row) in z.data().chunks(8).enumerate() {
            let mut best = (f64::INFINITY, 0);
            for k in 0..64 {
                let d: f64 = (0..8).map(|c| (row[c] - cb.data()[k * 8 + c]).powi(2)).sum();
                if d < best.0 {
                    best = (d, k);
                }
            }
            assert_eq!(idx[r], best.1);
            assert_eq!(&q.data()[r * 8..r * 8 + 8], &cb.data()[best.1 * 8..best.1 * 8 + 8]);
        }
    }
}

#[test]
fn straight_through_copies_gradient() {
    for seed in 0..10 {
        let mut rng = SeededRng::new(seed);
        let mut g = Graph::<f64>::new();
        let z_hat = g.leaf(rand_t(&[2, 3, 4], &mut rng, -1.0, 1.0), true);
        let z_q = g.leaf(rand_t(&[2, 3, 4], &mut rng, -1.0, 1.0), true);
        let out = g.straight_through(z_hat, z_q).unwrap();
        g.retain_grad(out);
        assert_eq!(g.value(out), g.value(z_q));
        let y = g.tanh(out);
        let l = probe(&mut g, y, seed).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.grad(z_hat).unwrap(), g.grad(out).unwrap());
        assert!(g.grad(z_q).map_or(true, |gr| gr.iter().all(|&v| v == 0.0)));
    }
}

#[test]
fn encoder_receives_gradient_through_quantization() {
    let model = VqModel::new(Part::Upper, small_cfg(), 5);
    let mut rng = SeededRng::new(5);
    let x = Tensor::new(vec![1, 8, Part::Upper.dim()], random_rot6d(&mut rng, 8 * 13)).unwrap();
    let mut g = Graph::with_params(&model.store);
    let xv = g.constant(x);
    let f = model.forward(&mut g, xv).unwrap();
    g.retain_grad(f.z_hat);
    g.retain_grad(f.z_st);
    let probe_loss = probe(&mut g, f.recon, 1).unwrap();
    g.backward(probe_loss).unwrap();
    let grads = g.param_grads();
    for name in ["upper.enc0.weight", "upper.enc3.weight"] {
        let id = model.store.id(name).unwrap();
        let gr = grads.get(id).expect(name);
        assert!(gr.data().iter().any(|&v| v != 0.0), "{name} has zero gradient");
    }
    // The post-quantization gradient reaches the pre-quantization latent unchanged.
    assert_eq!(g.grad(f.z_hat).unwrap(), g.grad(f.z_st).unwrap());
}

#[test]
fn stop_gradients_split_the_latent_terms() {
    let mut rng = SeededRng::new(2);
    let part = Part::Face;
    let m = rand_t(&[1, 4, part.dim()], &mut rng, -1.0, 1.0);
    let zh = rand_t(&[1, 1, 3], &mut rng, -1.0, 1.0);
    let zq = rand_t(&[1, 1, 3], &mut rng, -1.0, 1.0);
    let mut g = Graph::<f64>::new();
    let mv = g.constant(m.clone());
    let mh = g.constant(m);
    let z_hat = g.leaf(zh.clone(), true);
    let z_q = g.leaf(zq.clone(), true);
    let (l, _) = vq_loss(&mut g, part, mv, mh, z_hat, z_q, true).unwrap();
    g.backward(l).unwrap();
    // Each squared term alone would give 2(a − b)/n to its own argument;
    // without the stop-gradients both arguments would get twice that.
    let n = 3.0;
    for k in 0..3 {
        let to_codebook = 2.0 * (zq.data()[k] - zh.data()[k]) / n;
        let to_encoder = 2.0 * (zh.data()[k] - zq.data()[k]) / n;
        assert!((g.grad(z_q).unwrap()[k] - to_codebook).abs() < 1e-15);
        assert!((g.grad(z_hat).unwrap()[k] - to_encoder).abs() < 1e-15);
    }
}

#[test]
fn codebook_term_reaches_only_the_codebook() {
    let model = VqModel::new(Part::Face, small_cfg(), 8);
    let mut rng = SeededRng::new(8);
    let x = rand_t(&[1, 8, Part::Face.dim()], &mut rng, -1.0, 1.0);
    let mut g = Graph::with_params(&model.store);
    let xv = g.constant(x);
    let z_hat = model.encode(&mut g, xv).unwrap();
    let (z_q, _) = model.lookup(&mut g, z_hat).unwrap();
    let sg_hat = g.detach(z_hat);
    let cb_term = g.mse(sg_hat, z_q).unwrap();
    g.backward(cb_term).unwrap();
    let grads = g.param_grads();
    let cb = grads.get(model.codebook).expect("codebook gradient");
    assert!(cb.data().iter().any(|&v| v != 0.0));
    for id in model.store.ids().filter(|&id| id != model.codebook) {
        assert!(grads.get(id).map_or(true, |t| t.data().iter().all(|&v| v == 0.0)), "{}", model.store.name(id));
    }
}

#[test]
fn commitment_term_reaches_only_the_encoder() {
    let model = VqModel::new(Part::Face, small_cfg(), 9);
    let mut rng = SeededRng::new(9);
    let x = rand_t(&[1, 8, Part::Face.dim()], &mut rng, -1.0, 1.0);
    let mut g = Graph::with_params(&model.store);
    let xv = g.constant(x);
    let z_hat = model.encode(&mut g, xv).unwrap();
    let (z_q, _) = model.lookup(&mut g, z_hat).unwrap();
    let sg_q = g.detach(z_q);
    let term = g.mse(z_hat, sg_q).unwrap();
    g.backward(term).unwrap();
    let grads = g.param_grads();
    assert!(grads.get(model.codebook).map_or(true, |t| t.data().iter().all(|&v| v == 0.0)));
    let enc = model.store.id("face.enc3.weight").unwrap();
    assert!(grads.get(enc).unwrap().data().iter().any(|&v| v != 0.0));
    let dec = model.store.id("face.dec0.weight").unwrap();
    assert!(grads.get(dec).map_or(true, |t| t.data().iter().all(|&v| v == 0.0)));
}

#[test]
fn perfect_reconstruction_costs_nothing() {
    let mut rng = SeededRng::new(4);
    let z = rand_t(&[1, 2, 3], &mut rng, -1.0, 1.0);
    // Face: every term is a squared error, so the total is exactly zero.
    let m = rand_t(&[2, 8, Part::Face.dim()], &mut rng, -1.0, 1.0);
    let mut g = Graph::<f64>::new();
    let (a, b) = (g.constant(m.clone()), g.constant(m));
    let (zh, zq) = (g.constant(z.clone()), g.constant(z.clone()));
    let (l, terms) = vq_loss(&mut g, Part::Face, a, b, zh, zq, true).unwrap();
    assert_eq!(g.value(l).item(), 0.0);
    assert_eq!(terms.total, 0.0);
    // Body: only the geodesic clamp floor remains.
    let rot = random_rot6d(&mut rng, 8 * 13);
    let m = Tensor::new(vec![1, 8, Part::Upper.dim()], rot).unwrap();
    let mut g = Graph::<f64>::new();
    let (a, b) = (g.constant(m.clone()), g.constant(m));
    let (zh, zq) = (g.constant(z.clone()), g.constant(z));
    let (_, terms) = vq_loss(&mut g, Part::Upper, a, b, zh, zq, true).unwrap();
    assert!((terms.total - (1.0 - GEODESIC_EPS).acos()).abs() < 1e-9, "{}", terms.total);
    assert_eq!((terms.vel, terms.acc, terms.codebook, terms.commit), (0.0, 0.0, 0.0, 0.0));
}

#[test]
fn static_sequences_have_no_motion_terms() {
    let mut rng = SeededRng::new(6);
    let frame: Vec<f64> = random_rot6d(&mut rng, 12).into_iter().chain((0..7).map(|_| rng.uniform(-1.0, 1.0))).collect();
    assert_eq!(frame.len(), Part::Lower.dim());
    let m = Tensor::from_fn(vec![1, 6, frame.len()], |i| frame[i % frame.len()]);
    let frame2: Vec<f64> = frame.iter().map(|v| v + 0.1).collect();
    let mh = Tensor::from_fn(vec![1, 6, frame.len()], |i| frame2[i % frame.len()]);
    let mut g = Graph::<f64>::new();
    let (a, b) = (g.constant(m), g.constant(mh));
    let z = g.constant(Tensor::zeros(vec![1, 2, 2]));
    let (_, terms) = vq_loss(&mut g, Part::Lower, a, b, z, z, true).unwrap();
    assert_eq!((terms.vel, terms.acc), (0.0, 0.0));
    assert!(terms.rec > 0.0 && terms.translation > 0.0);
}

#[test]
fn three_frame_face_example() {
    let d = Part::Face.dim();
    let mut m = vec![0.0; 3 * d];
    let mut mh = vec![0.0; 3 * d];
    for (t, (a, b)) in [(0.0, 0.0), (1.0, 2.0), (3.0, 2.0)].into_iter().enumerate() {
        m[t * d] = a;
        mh[t * d] = b;
    }
    let mut g = Graph::<f64>::new();
    let mv = g.constant(Tensor::new(vec![1, 3, d], m).unwrap());
    let mhv = g.constant(Tensor::new(vec![1, 3, d], mh).unwrap());
    let zh = g.constant(Tensor::new(vec![1, 1, 2], vec![1.0, 2.0]).unwrap());
    let zq = g.constant(Tensor::new(vec![1, 1, 2], vec![0.0, 0.0]).unwrap());
    let (l, t) = vq_loss(&mut g, Part::Face, mv, mhv, zh, zq, true).unwrap();
    // Frame errors 0, 1, 1; velocities (1, 2) vs (2, 0); accelerations 1 vs −2.
    let rec = (0.0 + 1.0 + 1.0) / (3.0 * d as f64);
    let vel = (1.0 + 4.0) / (2.0 * d as f64);
    let acc = 9.0 / d as f64;
    let latent = (1.0 + 4.0) / 2.0;
    assert!((t.rec - rec).abs() < 1e-15);
    assert!((t.vel - vel).abs() < 1e-15);
    assert!((t.acc - acc).abs() < 1e-15);
    assert_eq!((t.codebook, t.commit), (latent, latent));
    assert!((g.value(l).item() - (rec + vel + acc + 2.0 * latent)).abs() < 1e-12);

    let mut g = Graph::<f64>::new();
    let mv = g.constant(Tensor::zeros(vec![1, 2, d]));
    let z = g.constant(Tensor::zeros(vec![1, 1, 2]));
    assert!(vq_loss(&mut g, Part::Face, mv, mv, z, z, true).is_err());
}

#[test]
fn vq_loss_gradient_wrt_reconstruction() {
    for (part, seed) in [(Part::Upper, 1u64), (Part::Lower, 2), (Part::Face, 3)] {
        let mut rng = SeededRng::new(seed);
        let t = 4;
        let d = part.dim();
        let rc = part.rot_channels();
        let mut m = Vec::with_capacity(t * d);
        let mut mh = Vec::with_capacity(t * d);
        let rots = random_rot6d(&mut rng, t * rc / 6);
        for f in 0..t {
            m.extend_from_slice(&rots[f * rc..(f + 1) * rc]);
            for _ in rc..d {
                m.push(rng.uniform(-1.0, 1.0));
            }
        }
        for &v in &m {
            // Keep L1 terms away from their kink.
            mh.push(v + rng.uniform(0.05, 0.3) * if rng.bernoulli(0.5) { 1.0 } else { -1.0 });
        }
        let m = Tensor::new(vec![1, t, d], m).unwrap();
        let zh = rand_t(&[1, 1, 3], &mut rng, -1.0, 1.0);
        let zq = rand_t(&[1, 1, 3], &mut rng, -1.0, 1.0);
        let err = grad_check(
            |g, v| {
                let mv = g.constant(m.clone());
                let (a, b) = (g.constant(zh.clone()), g.constant(zq.clone()));
                Ok(vq_loss(g, part, mv, v[0], a, b, true)?.0)
            },
            &[Tensor::new(vec![1, t, d], mh).unwrap()],
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-4, "{part}: {err}");
    }
}

#[test]
fn training_is_deterministic_and_freezes_normalization() {
    let mut rng = SeededRng::new(12);
    let clips: Vec<MotionSequence> = (0..3)
        .map(|_| {
            let mut frames = Vec::new();
            for _ in 0..16 {
                frames.extend(random_rot6d(&mut rng, 55));
                frames.extend((0..FULL_DIM - 330).map(|_| rng.uniform(-0.5, 0.5)));
            }
            MotionSequence::new(frames, 16, FULL_DIM, 30).unwrap()
        })
        .collect();
    let cfg = VqTrainConfig { epochs: 3, batches_per_epoch: 2, batch_size: 2, window: 8, seed: 4, ..VqTrainConfig::default() };
    let (m1, l1) = train_vqvae(Part::Hands, &clips, small_cfg(), &cfg).unwrap();
    let (m2, l2) = train_vqvae(Part::Hands, &clips, small_cfg(), &cfg).unwrap();
    assert_eq!(l1, l2);
    assert_eq!(m1.store.checksum(), m2.store.checksum());
    assert_eq!(l1.epochs.len(), 3);
    let slices: Vec<MotionSequence> = clips.iter().map(|c| c.part(Part::Hands).unwrap()).collect();
    let u = codebook_utilization(&m1, &slices, 8).unwrap();
    assert!(u > 0.0 && u <= 1.0);
    let fresh = VqModel::new(Part::Hands, small_cfg(), 4);
    assert_ne!(m1.store.checksum(), fresh.store.checksum());
}
