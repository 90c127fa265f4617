use gesture_core::attention::{Attention, AttentionConfig};
use gesture_core::ndiff::{grad_check, Graph, ParamStore, Tensor, Var};
use gesture_core::ssm::{self, random_tensor, Discretization, ScanDims, SsmParams};
use gesture_core::SeededRng;
use proptest::prelude::*;

/// `y_t = Σ_{k≤t} C_t · (Π_{j=k+1..t} Ā_j) B̄_k x_k`, materialized directly.
fn unrolled(d: ScanDims, abar: &[f64], bbar: &[f64], c: &[f64], x: &[f64]) -> Vec<f64> {
    let ScanDims { batch, len, channels: e, state: n } = d;
    let at = |b: usize, t: usize, ei: usize, ni: usize| ((b * len + t) * e + ei) * n + ni;
    let mut y = vec![0.0; batch * len * e];
    for b in 0..batch {
        for t in 0..len {
            for ei in 0..e {
                let mut acc = 0.0;
                for ni in 0..n {
                    for k in 0..=t {
                        let mut prod = 1.0;
                        for j in k + 1..=t {
                            prod *= abar[at(b, j, ei, ni)];
                        }
                        acc += c[(b * len + t) * n + ni] * prod * bbar[at(b, k, ei, ni)] * x[(b * len + k) * e + ei];
                    }
                }
                y[(b * len + t) * e + ei] = acc;
            }
        }
    }
    y
}

fn random_scan_inputs(seed: u64, d: ScanDims) -> [Tensor<f64>; 4] {
    let mut rng = SeededRng::new(seed);
    let ScanDims { batch, len, channels: e, state: n } = d;
    [
        random_tensor(&[batch, len, e, n], 0.0, 1.0, &mut rng),
        random_tensor(&[batch, len, e, n], -1.0, 1.0, &mut rng),
        random_tensor(&[batch, len, n], -1.0, 1.0, &mut rng),
        random_tensor(&[batch, len, e], -1.0, 1.0, &mut rng),
    ]
}

fn run_scan(inputs: &[Tensor<f64>; 4]) -> Vec<f64> {
    let mut g = Graph::<f64>::new();
    let v: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let y = ssm::scan(&mut g, v[0], v[1], v[2], v[3]).unwrap();
    g.value(y).data().to_vec()
}

#[test]
fn scan_matches_unrolled_over_100_seeds() {
    for seed in 0..100u64 {
        let mut rng = SeededRng::new(seed + 1000);
        let d = ScanDims { batch: 1 + rng.below(2), len: 1 + rng.below(32), channels: 1 + rng.below(8), state: 1 + rng.below(4) };
        let inp = random_scan_inputs(seed, d);
        let got = run_scan(&inp);
        let want = unrolled(d, inp[0].data(), inp[1].data(), inp[2].data(), inp[3].data());
        let err = got.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-10, "seed {seed} {d:?}: {err}");
    }
}

#[test]
fn scan_base_case_and_memoryless() {
    let d = ScanDims { batch: 2, len: 6, channels: 3, state: 2 };
    let mut inp = random_scan_inputs(7, d);
    let y1 = run_scan(&inp);
    // First step has no prior state: y₀ = C₀·(B̄₀x₀)
    let (e, n) = (3, 2);
    for ei in 0..e {
        let want: f64 = (0..n).map(|ni| inp[2].data()[ni] * inp[1].data()[ei * n + ni] * inp[3].data()[ei]).sum();
        assert!((y1[ei] - want).abs() < 1e-15);
    }
    // Ā ≡ 0: every step forgets the past.
    inp[0] = Tensor::zeros(vec![2, 6, 3, 2]);
    let y = run_scan(&inp);
    for bt in 0..12 {
        for ei in 0..e {
            let want: f64 = (0..n)
                .map(|ni| inp[2].data()[bt * n + ni] * inp[1].data()[(bt * e + ei) * n + ni] * inp[3].data()[bt * e + ei])
                .sum();
            assert!((y[bt * e + ei] - want).abs() < 1e-15);
        }
    }
}

#[test]
fn scan_gradients() {
    for seed in 0..20 {
        let d = ScanDims { batch: 2, len: 5, channels: 3, state: 2 };
        let inp = random_scan_inputs(seed, d);
        let w = random_tensor::<f64>(&[2, 5, 3], -1.0, 1.0, &mut SeededRng::new(seed + 50));
        let err = grad_check(
            |g, v| {
                let y = ssm::scan(g, v[0], v[1], v[2], v[3])?;
                let wv = g.constant(w.clone());
                let p = g.mul(y, wv)?;
                Ok(g.sum(p))
            },
            &inp,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn fused_scan_matches_graph_path() {
    let mut rng = SeededRng::new(2);
    let d = ScanDims { batch: 2, len: 9, channels: 4, state: 3 };
    let delta = random_tensor::<f64>(&[2, 9, 4], 0.01, 1.0, &mut rng);
    let a = random_tensor::<f64>(&[4, 3], -2.0, -0.1, &mut rng);
    let b = random_tensor::<f64>(&[2, 9, 3], -1.0, 1.0, &mut rng);
    let c = random_tensor::<f64>(&[2, 9, 3], -1.0, 1.0, &mut rng);
    let x = random_tensor::<f64>(&[2, 9, 4], -1.0, 1.0, &mut rng);
    let mut g = Graph::<f64>::new();
    let [dv, av, bv, cv, xv] = [&delta, &a, &b, &c, &x].map(|t| g.constant(t.clone()));
    let (ab, bb) = ssm::discretize(&mut g, dv, av, bv, Discretization::Euler).unwrap();
    let y = ssm::scan(&mut g, ab, bb, cv, xv).unwrap();
    let fused = ssm::selective_scan(d, delta.data(), a.data(), b.data(), c.data(), x.data());
    for (p, q) in g.value(y).data().iter().zip(&fused) {
        assert!((p - q).abs() < 1e-13);
    }
}

#[test]
fn exact_minus_euler_is_second_order() {
    let mut rng = SeededRng::new(11);
    for _ in 0..20 {
        let delta = rng.uniform(0.01, 0.1);
        let a = -rng.uniform(0.5, 3.0);
        let b = rng.uniform(-2.0, 2.0);
        let gap = |d: f64| {
            let (_, exact) = ssm::discretize_scalar(d, a, b, Discretization::ExactZoh);
            let (_, euler) = ssm::discretize_scalar(d, a, b, Discretization::Euler);
            (exact - euler).abs()
        };
        let ratio = gap(delta) / gap(delta / 2.0);
        assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
    }
}

fn block(seed: u64, d: usize, e: usize, n: usize) -> (ParamStore<f64>, SsmParams) {
    let mut store = ParamStore::new();
    let p = SsmParams::new(&mut store, "m", d, e, n, &mut SeededRng::new(seed));
    (store, p)
}

#[test]
fn zero_output_projection_is_identity() {
    let (mut store, p) = block(1, 6, 8, 3);
    p.zero_output(&mut store);
    let mut g = Graph::with_params(&store);
    let x = random_tensor::<f64>(&[2, 7, 6], -1.0, 1.0, &mut SeededRng::new(4));
    let xv = g.constant(x.clone());
    let y = ssm::mamba_block(&mut g, xv, &p, Discretization::Euler).unwrap();
    assert_eq!(g.value(y), &x);
}

#[test]
fn mamba_block_gradients() {
    for seed in 0..3 {
        let (store, p) = block(seed, 4, 6, 3);
        let x = random_tensor::<f64>(&[2, 5, 4], -1.0, 1.0, &mut SeededRng::new(seed + 9));
        // Parameters are checked by feeding each one in as an input tensor.
        let mut inputs = vec![x];
        let ids: Vec<_> = store.ids().collect();
        inputs.extend(ids.iter().map(|&id| store.get(id).clone()));
        for mode in [Discretization::Euler, Discretization::ExactZoh] {
            let err = grad_check(
                |g, v| {
                    let y = with_param_vars(g, &p, &ids, &v[1..], v[0], mode)?;
                    let sq = g.square(y);
                    Ok(g.mean(sq))
                },
                &inputs,
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-4, "seed {seed} {mode:?}: {err}");
        }
    }
}

/// Runs the block with parameter leaves taken from `vars`.
fn with_param_vars(
    g: &mut Graph<'_, f64>,
    p: &SsmParams,
    ids: &[gesture_core::ndiff::ParamId],
    vars: &[Var],
    x: Var,
    mode: Discretization,
) -> gesture_core::Result<Var> {
    g.bind_params(ids.iter().copied().zip(vars.iter().copied()));
    ssm::mamba_block(g, x, p, mode)
}

#[test]
fn causal_in_time() {
    let (store, p) = block(3, 4, 6, 3);
    let x = random_tensor::<f64>(&[1, 12, 4], -1.0, 1.0, &mut SeededRng::new(5));
    let run = |x: &Tensor<f64>| {
        let mut g = Graph::inference(&store);
        let xv = g.constant(x.clone());
        let y = ssm::mamba_block(&mut g, xv, &p, Discretization::Euler).unwrap();
        g.value(y).clone()
    };
    let base = run(&x);
    for t in [0, 5, 11] {
        let mut x2 = x.clone();
        x2.data_mut()[t * 4 + 1] += 0.5;
        let y2 = run(&x2);
        for s in 0..t {
            assert_eq!(&base.data()[s * 4..(s + 1) * 4], &y2.data()[s * 4..(s + 1) * 4], "t={t} s={s}");
        }
        assert_ne!(&base.data()[t * 4..(t + 1) * 4], &y2.data()[t * 4..(t + 1) * 4]);
    }
}

#[test]
fn long_scan_stays_bounded() {
    let mut rng = SeededRng::new(6);
    let (m, e, n) = (8192, 4, 3);
    let d = ScanDims { batch: 1, len: m, channels: e, state: n };
    let delta: Vec<f64> = (0..m * e).map(|_| rng.uniform(0.001, 1.0)).collect();
    let a: Vec<f64> = (0..e * n).map(|i| -((i % n + 1) as f64)).collect();
    let b: Vec<f64> = (0..m * n).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let c: Vec<f64> = (0..m * n).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let x: Vec<f64> = (0..m * e).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let abar: Vec<f64> = (0..m * e * n).map(|i| (delta[i / n] * a[i % (e * n)]).exp()).collect();
    let bbar: Vec<f64> = (0..m * e * n).map(|i| delta[i / n] * b[(i / (e * n)) * n + i % n]).collect();
    let (_, hs) = ssm::scan_values(d, &abar, &bbar, &c, &x, true);
    let bmax = bbar.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let xmax = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let bound = bmax * xmax * m as f64;
    assert!(hs.iter().all(|h| h.is_finite() && h.abs() <= bound));
}

fn attention_oracle(store: &ParamStore<f64>, att: &Attention, q: &Tensor<f64>, kv: &Tensor<f64>) -> Vec<f64> {
    let lin = |l: &gesture_core::ndiff::nn::Linear, x: &[f64]| -> Vec<f64> {
        let w = store.get(l.weight);
        let b = store.get(l.bias.unwrap());
        (0..l.out_dim).map(|o| b.data()[o] + (0..l.in_dim).map(|i| w.at(&[o, i]) * x[i]).sum::<f64>()).collect()
    };
    let (bn, mq, d) = (q.shape()[0], q.shape()[1], q.shape()[2]);
    let mk = kv.shape()[1];
    let (h, dh) = (att.cfg.heads, att.cfg.head_dim());
    let mut out = Vec::new();
    for b in 0..bn {
        let qs: Vec<Vec<f64>> = (0..mq).map(|t| lin(&att.wq, &q.data()[(b * mq + t) * d..(b * mq + t + 1) * d])).collect();
        let ks: Vec<Vec<f64>> = (0..mk).map(|t| lin(&att.wk, &kv.data()[(b * mk + t) * d..(b * mk + t + 1) * d])).collect();
        let vs: Vec<Vec<f64>> = (0..mk).map(|t| lin(&att.wv, &kv.data()[(b * mk + t) * d..(b * mk + t + 1) * d])).collect();
        for t in 0..mq {
            let mut cat = vec![0.0; d];
            for hh in 0..h {
                let r = hh * dh..(hh + 1) * dh;
                let s: Vec<f64> = (0..mk)
                    .map(|j| r.clone().map(|i| qs[t][i] * ks[j][i]).sum::<f64>() / (dh as f64).sqrt())
                    .collect();
                let mx = s.iter().cloned().fold(f64::MIN, f64::max);
                let z: f64 = s.iter().map(|v| (v - mx).exp()).sum();
                for j in 0..mk {
                    let w = (s[j] - mx).exp() / z;
                    for i in r.clone() {
                        cat[i] += w * vs[j][i];
                    }
                }
            }
            let o = lin(&att.wo, &cat);
            out.extend(o.iter().zip(&q.data()[(b * mq + t) * d..(b * mq + t + 1) * d]).map(|(a, b)| a + b));
        }
    }
    out
}

#[test]
fn attention_matches_oracle() {
    let mut store = ParamStore::new();
    let att = Attention::new(&mut store, "a", AttentionConfig::new(8, 2).unwrap(), &mut SeededRng::new(1));
    let mut rng = SeededRng::new(2);
    let x = random_tensor::<f64>(&[1, 5, 8], -1.0, 1.0, &mut rng);
    let kv = random_tensor::<f64>(&[1, 3, 8], -1.0, 1.0, &mut rng);
    let mut g = Graph::inference(&store);
    let xv = g.constant(x.clone());
    let kvv = g.constant(kv.clone());
    let y = att.mhsa(&mut g, xv).unwrap();
    let want = attention_oracle(&store, &att, &x, &x);
    assert!(g.value(y).data().iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-12));
    let yc = att.mhca(&mut g, xv, kvv).unwrap();
    assert_eq!(g.shape(yc), &[1, 5, 8]);
    let want = attention_oracle(&store, &att, &x, &kv);
    assert!(g.value(yc).data().iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-12));
}

#[test]
fn single_token_attention() {
    let mut store = ParamStore::<f64>::new();
    let att = Attention::new(&mut store, "a", AttentionConfig::new(8, 2).unwrap(), &mut SeededRng::new(1));
    let mut g = Graph::inference(&store);
    let q = g.constant(random_tensor(&[2, 4, 8], -1.0, 1.0, &mut SeededRng::new(3)));
    let kv = g.constant(random_tensor(&[2, 1, 8], -1.0, 1.0, &mut SeededRng::new(4)));
    let o = att.cross(&mut g, q, kv).unwrap();
    assert!(g.value(o.weights).data().iter().all(|&w| w == 1.0));
    // M = 1 self-attention: out_proj(value(x)) + x
    let x1 = g.constant(random_tensor(&[1, 1, 8], -1.0, 1.0, &mut SeededRng::new(5)));
    let y = att.mhsa(&mut g, x1).unwrap();
    let v = att.wv.forward(&mut g, x1).unwrap();
    let o = att.wo.forward(&mut g, v).unwrap();
    let want = g.add(o, x1).unwrap();
    assert!(g.value(y).max_abs_diff(g.value(want)) < 1e-15);
}

#[test]
fn attention_gradients() {
    let mut store = ParamStore::new();
    let att = Attention::new(&mut store, "a", AttentionConfig::new(4, 2).unwrap(), &mut SeededRng::new(1));
    let ids: Vec<_> = store.ids().collect();
    for seed in 0..5 {
        let mut rng = SeededRng::new(seed);
        let mut inputs = vec![random_tensor::<f64>(&[1, 3, 4], -1.0, 1.0, &mut rng), random_tensor(&[1, 2, 4], -1.0, 1.0, &mut rng)];
        inputs.extend(ids.iter().map(|&id| store.get(id).clone()));
        for cross in [false, true] {
            let err = grad_check(
                |g, v| {
                    g.bind_params(ids.iter().copied().zip(v[2..].iter().copied()));
                    let y = if cross { att.mhca(g, v[0], v[1])? } else { att.mhsa(g, v[0])? };
                    let sq = g.square(y);
                    Ok(g.mean(sq))
                },
                &inputs,
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-4, "seed {seed} cross {cross}: {err}");
        }
    }
}

proptest! {
    #[test]
    fn weights_rows_sum_to_one(seed in 0u64..500, mq in 1usize..6, mk in 1usize..6) {
        let mut store = ParamStore::new();
        let att = Attention::new(&mut store, "a", AttentionConfig::new(8, 4).unwrap(), &mut SeededRng::new(seed));
        let mut g = Graph::inference(&store);
        let mut rng = SeededRng::new(seed + 1);
        let q = g.constant(random_tensor(&[1, mq, 8], -3.0, 3.0, &mut rng));
        let kv = g.constant(random_tensor(&[1, mk, 8], -3.0, 3.0, &mut rng));
        let o = att.cross(&mut g, q, kv).unwrap();
        for row in g.value(o.weights).data().chunks(mk) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn kv_permutation_invariance(seed in 0u64..200) {
        let mut store = ParamStore::new();
        let att = Attention::new(&mut store, "a", AttentionConfig::new(8, 2).unwrap(), &mut SeededRng::new(seed));
        let mut rng = SeededRng::new(seed + 7);
        let q = random_tensor::<f64>(&[1, 3, 8], -1.0, 1.0, &mut rng);
        let kv = random_tensor::<f64>(&[1, 4, 8], -1.0, 1.0, &mut rng);
        let mut perm: Vec<usize> = (0..4).collect();
        rng.shuffle(&mut perm);
        let kv2 = Tensor::from_fn(vec![1, 4, 8], |i| kv.data()[perm[i / 8] * 8 + i % 8]);
        let mut g = Graph::inference(&store);
        let (qv, a, b) = (g.constant(q), g.constant(kv), g.constant(kv2));
        let y1 = att.mhca(&mut g, qv, a).unwrap();
        let y2 = att.mhca(&mut g, qv, b).unwrap();
        prop_assert!(g.value(y1).max_abs_diff(g.value(y2)) < 1e-12);
    }

    #[test]
    fn scan_oracle_property(seed in 0u64..10_000) {
        let mut rng = SeededRng::new(seed);
        let d = ScanDims { batch: 1 + rng.below(2), len: 1 + rng.below(12), channels: 1 + rng.below(4), state: 1 + rng.below(3) };
        let inp = random_scan_inputs(seed, d);
        let got = run_scan(&inp);
        let want = unrolled(d, inp[0].data(), inp[1].data(), inp[2].data(), inp[3].data());
        prop_assert!(got.iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-10));
    }
}
