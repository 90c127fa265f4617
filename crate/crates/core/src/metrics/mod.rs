//! Evaluation metrics: FGD, diversity, beat constancy, face MSE and LVD.

pub mod beats;
pub mod extractor;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

pub use beats::{audio_beats, beat_constancy, motion_beats, speed_curve, BeatSet, DEFAULT_BC_SIGMA};
pub use extractor::{mean_channel_std, ExtractorConfig, FeatureExtractor};

use crate::error::{invalid, Error, Result};
use crate::motion::layout::{FACE_CHANNELS, FACE_START, FULL_DIM, TRANS_START};
use crate::motion::MotionSequence;

/// Diagonal regularizer added to both covariances.
pub const FGD_EPS: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianStats {
    /// Sample mean and unbiased covariance (plain `ε·I` when there is one
    /// sample), with `ε` added to the diagonal.
    pub fn fit(samples: &[Vec<f64>]) -> Result<Self> {
        let n = samples.len();
        let d = samples.first().map(Vec::len).ok_or_else(|| invalid("gaussian fit of zero samples"))?;
        if d == 0 || samples.iter().any(|s| s.len() != d) {
            return Err(invalid("gaussian fit: samples must share a nonzero dimension"));
        }
        let mut mean = DVector::zeros(d);
        for s in samples {
            mean += DVector::from_column_slice(s);
        }
        mean /= n as f64;
        let mut cov = DMatrix::zeros(d, d);
        if n > 1 {
            for s in samples {
                let c = DVector::from_column_slice(s) - &mean;
                cov.ger(1.0, &c, &c, 1.0);
            }
            cov /= (n - 1) as f64;
        }
        cov = (&cov + cov.transpose()) * 0.5;
        for i in 0..d {
            cov[(i, i)] += FGD_EPS;
        }
        Ok(GaussianStats { mean, cov })
    }
}

fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let e = SymmetricEigen::new(m.clone());
    let s = DMatrix::from_diagonal(&e.eigenvalues.map(|l| l.max(0.0).sqrt()));
    &e.eigenvectors * s * e.eigenvectors.transpose()
}

/// `‖μ_r − μ_g‖² + tr(Σ_r + Σ_g − 2(Σ_r Σ_g)^{1/2})`.
///
/// `tr((Σ_r Σ_g)^{1/2})` equals the trace of the square root of the
/// symmetric `Σ_r^{1/2} Σ_g Σ_r^{1/2}`, which is what gets decomposed.
pub fn fgd_stats(r: &GaussianStats, g: &GaussianStats) -> Result<f64> {
    if r.mean.len() != g.mean.len() {
        return Err(Error::Shape { op: "fgd", lhs: vec![r.mean.len()], rhs: vec![g.mean.len()] });
    }
    let dm = (&r.mean - &g.mean).norm_squared();
    let rs = sym_sqrt(&r.cov);
    let inner = &rs * &g.cov * &rs;
    let inner = (&inner + inner.transpose()) * 0.5;
    let tr_sqrt: f64 = SymmetricEigen::new(inner).eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum();
    let v = dm + r.cov.trace() + g.cov.trace() - 2.0 * tr_sqrt;
    Ok(v.max(0.0))
}

pub fn fgd(real: &[Vec<f64>], generated: &[Vec<f64>]) -> Result<f64> {
    if real.is_empty() || generated.is_empty() {
        return Err(invalid("fgd needs at least one sample on each side"));
    }
    fgd_stats(&GaussianStats::fit(real)?, &GaussianStats::fit(generated)?)
}

/// Frame values compared by [`diversity`]: full-body frames with the root
/// translation zeroed; other layouts pass through.
pub fn pose_channels(m: &MotionSequence) -> Vec<f64> {
    let mut v = m.frames.clone();
    if m.dim == FULL_DIM {
        for f in v.chunks_mut(FULL_DIM) {
            f[TRANS_START..].fill(0.0);
        }
    }
    v
}

/// `1/(2N(N−1)) Σ_t Σ_{i≠j} ‖p_t^i − p_t^j‖₁` over ordered pairs.
pub fn diversity(clips: &[MotionSequence]) -> Result<f64> {
    diversity_with(clips, pose_channels)
}

pub fn diversity_with(clips: &[MotionSequence], adapter: impl Fn(&MotionSequence) -> Vec<f64>) -> Result<f64> {
    let n = clips.len();
    if n < 2 {
        return Err(invalid(format!("diversity needs at least 2 clips, got {n}")));
    }
    let p: Vec<Vec<f64>> = clips.iter().map(adapter).collect();
    if p.iter().any(|x| x.len() != p[0].len()) {
        return Err(invalid("diversity: clips differ in length"));
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                total += p[i].iter().zip(&p[j]).map(|(a, b)| (a - b).abs()).sum::<f64>();
            }
        }
    }
    Ok(total / (2 * n * (n - 1)) as f64)
}

/// Face coefficients of full-body frames, the vertex stand-in.
pub fn face_channels(m: &MotionSequence) -> Result<MotionSequence> {
    if m.dim != FULL_DIM {
        return Err(invalid(format!("face channels need {FULL_DIM}-channel frames, got {}", m.dim)));
    }
    let frames = m.frames.chunks(FULL_DIM).flat_map(|f| f[FACE_START..FACE_START + FACE_CHANNELS].iter().copied()).collect();
    MotionSequence::new(frames, m.len, FACE_CHANNELS, m.fps)
}

fn check_same(op: &'static str, a: &MotionSequence, b: &MotionSequence) -> Result<()> {
    if a.len != b.len || a.dim != b.dim {
        return Err(Error::Shape { op, lhs: vec![a.len, a.dim], rhs: vec![b.len, b.dim] });
    }
    Ok(())
}

/// Mean squared difference over every value.
pub fn vertex_mse(f: &MotionSequence, g: &MotionSequence) -> Result<f64> {
    check_same("vertex_mse", f, g)?;
    if f.frames.is_empty() {
        return Err(invalid("vertex_mse of empty sequences"));
    }
    Ok(f.frames.iter().zip(&g.frames).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / f.frames.len() as f64)
}

/// Mean absolute difference of first temporal differences.
pub fn lvd(f: &MotionSequence, g: &MotionSequence) -> Result<f64> {
    check_same("lvd", f, g)?;
    if f.len < 2 || f.dim == 0 {
        return Err(invalid("lvd needs at least 2 frames"));
    }
    let d = f.dim;
    let mut s = 0.0;
    for t in 1..f.len {
        for k in 0..d {
            let vf = f.frames[t * d + k] - f.frames[(t - 1) * d + k];
            let vg = g.frames[t * d + k] - g.frames[(t - 1) * d + k];
            s += (vf - vg).abs();
        }
    }
    Ok(s / ((f.len - 1) * d) as f64)
}
