//! Per-module generation latency and scan-vs-attention scaling.

use std::time::Instant;

use gesture_core::attention::attention_forward_blocked;
use gesture_core::config::KeyValues;
use gesture_core::corpus::{synth_clip, CorpusSpec, World};
use gesture_core::ssm::{selective_scan, ScanDims};
use gesture_core::synthesis::{generate, ModuleTimes};
use gesture_core::{Error, Result, SeededRng};
use nalgebra::{DMatrix, DVector};

use crate::commands::load_models;
use crate::report::{write_config, Report};
use crate::BenchArgs;

/// Scan channels and state size of the scaling table.
const SCAN_CHANNELS: usize = 128;
const SCAN_STATE: usize = 8;
const ATTN_DIM: usize = 64;
const ATTN_BLOCK: usize = 256;

/// Mean and sample standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (m, var.sqrt())
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 { s[n / 2] } else { 0.5 * (s[n / 2 - 1] + s[n / 2]) }
}

fn minimum(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

/// R² of the least-squares polynomial fit of `y` on `x` with the given
/// degree.
pub fn poly_r2(x: &[f64], y: &[f64], degree: usize) -> f64 {
    let n = x.len();
    let design = DMatrix::from_fn(n, degree + 1, |i, j| x[i].powi(j as i32));
    let target = DVector::from_column_slice(y);
    let Ok(coef) = design.clone().svd(true, true).solve(&target, 1e-12) else { return f64::NAN };
    let resid = &target - &design * coef;
    let mean = y.iter().sum::<f64>() / n as f64;
    let total: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    1.0 - resid.norm_squared() / total
}

/// Each scaling sample loops the call until this much time has passed and
/// reports the mean.
const MIN_SAMPLE_SECONDS: f64 = 0.2;

fn amortized(mut call: impl FnMut()) -> f64 {
    let t = Instant::now();
    let mut calls = 0u32;
    loop {
        call();
        calls += 1;
        let elapsed = t.elapsed().as_secs_f64();
        if elapsed >= MIN_SAMPLE_SECONDS {
            return elapsed / calls as f64;
        }
    }
}

/// Inputs for one length of the scaling table.
struct ScalingInputs {
    dims: ScanDims,
    delta: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    x: Vec<f64>,
    attn: Vec<f64>,
}

impl ScalingInputs {
    fn new(m: usize, rng: &mut SeededRng) -> Self {
        let (e, n) = (SCAN_CHANNELS, SCAN_STATE);
        let mut r = |len: usize, lo: f64, hi: f64| -> Vec<f64> { (0..len).map(|_| rng.uniform(lo, hi)).collect() };
        ScalingInputs {
            dims: ScanDims { batch: 1, len: m, channels: e, state: n },
            delta: r(m * e, 0.001, 0.5),
            a: (0..e * n).map(|i| -((i % n + 1) as f64)).collect(),
            b: r(m * n, -1.0, 1.0),
            c: r(m * n, -1.0, 1.0),
            x: r(m * e, -1.0, 1.0),
            attn: r(m * ATTN_DIM, -1.0, 1.0),
        }
    }

    fn scan(&self) {
        std::hint::black_box(selective_scan(self.dims, &self.delta, &self.a, &self.b, &self.c, &self.x));
    }

    fn attention(&self) {
        std::hint::black_box(attention_forward_blocked(&self.attn, self.dims.len, ATTN_DIM, ATTN_BLOCK));
    }
}

const MODULES: [&str; 9] =
    ["Audio Encoders", "Text Encoders", "Global Scan", "Local Scan", "Face Decoder", "Upper Decoder", "Hands Decoder", "Lower Decoder", "Total Time"];

fn module_values(t: &ModuleTimes) -> [f64; 9] {
    [t.audio, t.text, t.global, t.local, t.decoders[0], t.decoders[1], t.decoders[2], t.decoders[3], t.total]
}

pub fn run(a: &BenchArgs, seed: Option<u64>) -> Result<()> {
    if a.repeats == 0 || a.lengths.len() < 3 || a.lengths.iter().any(|&m| m == 0) {
        return Err(Error::Config("bench needs --repeats ≥ 1 and at least 3 positive lengths".into()));
    }
    if !(a.seconds > 0.0) {
        return Err(Error::Config("--seconds must be positive".into()));
    }
    let seed = seed.unwrap_or(0);
    let mut kv = KeyValues::new();
    kv.set("lengths", a.lengths.iter().map(|m| m.to_string()).collect::<Vec<_>>().join(";"));
    kv.set("repeats", a.repeats);
    kv.set("seconds", a.seconds);
    kv.set("seed", seed);
    kv.set("scan_channels", SCAN_CHANNELS);
    kv.set("scan_state", SCAN_STATE);
    kv.set("attention_dim", ATTN_DIM);
    if let Some(m) = &a.models {
        kv.set("generator_sha256", crate::report::sha256_file(&m.join(crate::commands::GENERATOR_FILE)).map_err(|e| match e {
            Error::Io(io) => Error::Checkpoint(format!("{}: {io}", m.display())),
            other => other,
        })?);
    }
    let mut r = Report::new("bench", &kv);
    let mut csv = String::from("table,row,mean,std,median,min\n");
    let mut summary = Vec::new();

    if let Some(dir) = &a.models {
        let (gen, vqs) = load_models(dir)?;
        let spec = CorpusSpec {
            seed,
            speakers: gen.cfg.speakers,
            clips_per_speaker: 1,
            duration: a.seconds,
            fps: gen.cfg.fps,
            sample_rate: gen.cfg.sample_rate,
            vocab: gen.cfg.vocab,
        };
        spec.validate()?;
        let clip = synth_clip(&spec, &World::new(&spec), 0);
        // One untimed call so lazy allocation does not land in the first row.
        let (motion, _) = generate(&gen, &vqs, &clip.audio, &clip.tokens, 0)?;
        let generated = motion.len as f64 / gen.cfg.fps as f64;
        let mut rows: Vec<Vec<f64>> = vec![Vec::new(); MODULES.len()];
        for _ in 0..a.repeats {
            let (_, t) = generate(&gen, &vqs, &clip.audio, &clip.tokens, 0)?;
            for (row, v) in rows.iter_mut().zip(module_values(&t)) {
                row.push(v / generated);
            }
        }
        r.set("generated_seconds", generated);
        summary.push(format!("time per generated second ({generated:.2} s per call, {} repeats):", a.repeats));
        for (name, v) in MODULES.iter().zip(&rows) {
            let (m, s) = mean_std(v);
            csv.push_str(&format!("module,{name},{m},{s},{},{}\n", median(v), minimum(v)));
            let key = name.to_lowercase().replace(' ', "_");
            r.time(&format!("per_second.{key}.mean"), m);
            r.time(&format!("per_second.{key}.std"), s);
            summary.push(format!("  {name:<15} {:>9.4} ± {:.4} s", m, s));
        }
    }

    let mut rng = SeededRng::new(seed).fork(0xBE7C);
    let lengths: Vec<f64> = a.lengths.iter().map(|&m| m as f64).collect();
    let inputs: Vec<ScalingInputs> = a.lengths.iter().map(|&m| ScalingInputs::new(m, &mut rng)).collect();
    // Lengths take turns within each repeat, so slow drift in machine speed
    // is spread over all of them instead of biasing one.
    let mut scan = vec![Vec::new(); inputs.len()];
    let mut attn = vec![Vec::new(); inputs.len()];
    for inp in &inputs {
        inp.scan();
    }
    for _ in 0..a.repeats {
        for (i, inp) in inputs.iter().enumerate() {
            scan[i].push(amortized(|| inp.scan()));
            attn[i].push(amortized(|| inp.attention()));
        }
    }
    // Interference only ever adds time, so the fits use the fastest sample.
    let (mut scan_min, mut attn_min) = (Vec::new(), Vec::new());
    summary.push("length      scan (s)        attention (s)".into());
    for (i, &m) in a.lengths.iter().enumerate() {
        let (sm, ss) = mean_std(&scan[i]);
        let (am, as_) = mean_std(&attn[i]);
        csv.push_str(&format!("scan,{m},{sm},{ss},{},{}\n", median(&scan[i]), minimum(&scan[i])));
        csv.push_str(&format!("attention,{m},{am},{as_},{},{}\n", median(&attn[i]), minimum(&attn[i])));
        r.time(&format!("scan.{m}.median"), median(&scan[i]));
        r.time(&format!("scan.{m}.min"), minimum(&scan[i]));
        r.time(&format!("attention.{m}.median"), median(&attn[i]));
        r.time(&format!("attention.{m}.min"), minimum(&attn[i]));
        summary.push(format!("{m:<8} {sm:>10.5} ± {ss:.5} {am:>10.5} ± {as_:.5}"));
        scan_min.push(minimum(&scan[i]));
        attn_min.push(minimum(&attn[i]));
    }
    let fits = [
        ("scan_r2_linear", poly_r2(&lengths, &scan_min, 1)),
        ("scan_r2_quadratic", poly_r2(&lengths, &scan_min, 2)),
        ("attention_r2_linear", poly_r2(&lengths, &attn_min, 1)),
        ("attention_r2_quadratic", poly_r2(&lengths, &attn_min, 2)),
    ];
    for (k, v) in fits {
        r.time(k, v);
        csv.push_str(&format!("fit,{k},{v},,,\n"));
    }
    summary.push(format!(
        "scan linear R² {:.4}; attention linear R² {:.4}, quadratic R² {:.4}",
        fits[0].1, fits[2].1, fits[3].1
    ));
    write_config(&a.report, &kv)?;
    r.write(&a.report)?;
    std::fs::write(a.report.with_extension("table.csv"), csv)?;
    println!("{}", summary.join("\n"));
    Ok(())
}
