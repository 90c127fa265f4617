//! Rot6D ↔ rotation matrices and the geodesic distance between rotations.

use crate::error::{Error, Result};
use crate::ndiff::{Graph, Var};

pub type Mat3 = [[f64; 3]; 3];

/// Clamp margin inside `acos` so exact alignment stays differentiable.
pub const GEODESIC_EPS: f64 = 1e-6;

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

/// Gram-Schmidt on the two 3-vectors of `r`; the results are the columns
/// of the rotation. Zero or parallel inputs are rejected.
pub fn rot6d_to_matrix(r: &[f64]) -> Result<Mat3> {
    let a1 = [r[0], r[1], r[2]];
    let a2 = [r[3], r[4], r[5]];
    let n1 = norm(a1);
    if !(n1 >= 1e-8) {
        return Err(Error::Degenerate(format!("rot6d first vector has norm {n1:e}")));
    }
    let b1 = a1.map(|v| v / n1);
    let p = dot(b1, a2);
    let u = [a2[0] - p * b1[0], a2[1] - p * b1[1], a2[2] - p * b1[2]];
    let n2 = norm(u);
    if !(n2 >= 1e-8 * norm(a2).max(1.0)) {
        return Err(Error::Degenerate("rot6d vectors are parallel or the second is zero".into()));
    }
    let b2 = u.map(|v| v / n2);
    let b3 = cross(b1, b2);
    Ok([[b1[0], b2[0], b3[0]], [b1[1], b2[1], b3[1]], [b1[2], b2[2], b3[2]]])
}

/// First two columns of `m`.
pub fn matrix_to_rot6d(m: &Mat3) -> [f64; 6] {
    [m[0][0], m[1][0], m[2][0], m[0][1], m[1][1], m[2][1]]
}

/// Projects any valid 6-vector onto the nearest exact Rot6D encoding.
pub fn orthonormalize_rot6d(r: &[f64]) -> Result<[f64; 6]> {
    Ok(matrix_to_rot6d(&rot6d_to_matrix(r)?))
}

/// Rodrigues' formula for rotation by `|w|` radians about `w / |w|`.
pub fn axis_angle_to_matrix(w: [f64; 3]) -> Mat3 {
    let theta = norm(w);
    if theta < 1e-12 {
        return [[1.0, -w[2], w[1]], [w[2], 1.0, -w[0]], [-w[1], w[0], 1.0]];
    }
    let k = w.map(|v| v / theta);
    let (s, c) = theta.sin_cos();
    let v = 1.0 - c;
    [
        [c + k[0] * k[0] * v, k[0] * k[1] * v - k[2] * s, k[0] * k[2] * v + k[1] * s],
        [k[1] * k[0] * v + k[2] * s, c + k[1] * k[1] * v, k[1] * k[2] * v - k[0] * s],
        [k[2] * k[0] * v - k[1] * s, k[2] * k[1] * v + k[0] * s, c + k[2] * k[2] * v],
    ]
}

pub fn transpose(m: &Mat3) -> Mat3 {
    let mut t = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            t[i][j] = m[j][i];
        }
    }
    t
}

pub fn matmul3(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    c
}

pub fn det3(m: &Mat3) -> f64 {
    dot(m[0], cross(m[1], m[2]))
}

/// `acos(clamp((tr(R1ᵀR2) − 1)/2))`, in `[0, π]`.
pub fn geodesic_angle(r1: &Mat3, r2: &Mat3) -> f64 {
    let tr: f64 = (0..3).map(|i| (0..3).map(|k| r1[k][i] * r2[k][i]).sum::<f64>()).sum();
    ((tr - 1.0) / 2.0).clamp(-1.0 + GEODESIC_EPS, 1.0 - GEODESIC_EPS).acos()
}

/// Mean geodesic angle over paired rotations.
pub fn geodesic_loss(r1: &[Mat3], r2: &[Mat3]) -> Result<f64> {
    if r1.len() != r2.len() || r1.is_empty() {
        return Err(Error::Shape { op: "geodesic_loss", lhs: vec![r1.len()], rhs: vec![r2.len()] });
    }
    Ok(r1.iter().zip(r2).map(|(a, b)| geodesic_angle(a, b)).sum::<f64>() / r1.len() as f64)
}

/// Unit columns `b1, b2` of the Gram-Schmidt frame of each `[K, 6]` row.
fn frame_columns(g: &mut Graph<'_, f64>, r: Var) -> Result<(Var, Var)> {
    let a1 = g.narrow(r, 1, 0, 3)?;
    let a2 = g.narrow(r, 1, 3, 3)?;
    let b1 = unit(g, a1)?;
    let p = row_dot(g, b1, a2)?;
    let proj = g.mul(p, b1)?;
    let u = g.sub(a2, proj)?;
    let b2 = unit(g, u)?;
    Ok((b1, b2))
}

fn row_dot(g: &mut Graph<'_, f64>, a: Var, b: Var) -> Result<Var> {
    let m = g.mul(a, b)?;
    let s = g.sum_axis(m, 1)?;
    let k = g.shape(s)[0];
    g.reshape(s, &[k, 1])
}

fn unit(g: &mut Graph<'_, f64>, a: Var) -> Result<Var> {
    let sq = row_dot(g, a, a)?;
    let sq = g.add_scalar(sq, 1e-12);
    let n = g.sqrt(sq);
    g.div(a, n)
}

/// Differentiable mean geodesic angle between `[K, 6]` Rot6D rows.
///
/// Uses `tr(R1ᵀR2) = b1·b1' + b2·b2' + (b1·b1')(b2·b2') − (b1·b2')(b2·b1')`,
/// which avoids forming the third columns.
pub fn geodesic_graph(g: &mut Graph<'_, f64>, pred: Var, target: Var) -> Result<Var> {
    let (p1, p2) = frame_columns(g, pred)?;
    let (t1, t2) = frame_columns(g, target)?;
    let d11 = row_dot(g, p1, t1)?;
    let d22 = row_dot(g, p2, t2)?;
    let d12 = row_dot(g, p1, t2)?;
    let d21 = row_dot(g, p2, t1)?;
    let a = g.mul(d11, d22)?;
    let b = g.mul(d12, d21)?;
    let c3 = g.sub(a, b)?;
    let s = g.add(d11, d22)?;
    let tr = g.add(s, c3)?;
    let cos = g.add_scalar(tr, -1.0);
    let cos = g.scale(cos, 0.5);
    let cos = g.clamp(cos, -1.0 + GEODESIC_EPS, 1.0 - GEODESIC_EPS);
    let ang = g.acos(cos);
    Ok(g.mean(ang))
}
