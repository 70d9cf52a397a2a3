//! Independent reference implementations shared by the integration tests
//! and the acceptance suite. Only `gradcheck` calls into the library, and
//! only to build the graphs it differentiates numerically.
#![allow(dead_code)]

pub mod gradcheck;

use graspdiff::nn::Mat;
use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;

/// `ᾱ_T` by a direct product over a linear β grid.
pub fn alpha_bar_product(steps: usize, beta_start: f64, beta_end: f64) -> f64 {
    (0..steps)
        .map(|i| {
            let beta = beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64;
            1.0 - beta
        })
        .product()
}

pub fn beta_grid(steps: usize, beta_start: f64, beta_end: f64) -> Vec<f64> {
    (0..steps).map(|i| beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64).collect()
}

/// Iterates `g_s = √(1-β_s) g_{s-1} + √β_s ε` for `t` steps.
pub fn forward_chain(g0: f64, betas: &[f64], t: usize, rng: &mut impl Rng) -> f64 {
    let mut g = g0;
    for &b in &betas[..t] {
        let e: f64 = rng.sample(StandardNormal);
        g = (1.0 - b).sqrt() * g + b.sqrt() * e;
    }
    g
}

pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0))
}

/// Brute-force BPS: every basis point against every cloud point.
pub fn bps_brute(cloud: &[[f64; 3]], basis: &[[f64; 3]]) -> Vec<f64> {
    let mut out = Vec::with_capacity(basis.len());
    for b in basis {
        let mut best = f64::INFINITY;
        for c in cloud {
            let d = ((b[0] - c[0]).powi(2) + (b[1] - c[1]).powi(2) + (b[2] - c[2]).powi(2)).sqrt();
            best = best.min(d);
        }
        out.push(best);
    }
    out
}

/// Haar-random rotation from the QR factorization of a Gaussian matrix,
/// with column signs fixed by the diagonal of R and a proper determinant.
pub fn qr_rotation(rng: &mut impl Rng) -> Matrix3<f64> {
    let a = Matrix3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = a.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..3 {
        if r[(j, j)] < 0.0 {
            q.set_column(j, &(-q.column(j)));
        }
    }
    if q.determinant() < 0.0 {
        q.set_column(2, &(-q.column(2)));
    }
    q
}

/// First two columns of a rotation, in the 6-D layout `[c0; c1]`.
pub fn first_two_columns(m: &Matrix3<f64>) -> [f64; 6] {
    [m[(0, 0)], m[(1, 0)], m[(2, 0)], m[(0, 1)], m[(1, 1)], m[(2, 1)]]
}

/// Gram-Schmidt on two 3-vectors, written out independently.
pub fn gram_schmidt(r: &[f64; 6]) -> Matrix3<f64> {
    let a = Vector3::new(r[0], r[1], r[2]);
    let b = Vector3::new(r[3], r[4], r[5]);
    let b1 = a / a.norm();
    let b2 = (b - b1 * b1.dot(&b)).normalize();
    let b3 = b1.cross(&b2);
    Matrix3::from_columns(&[b1, b2, b3])
}

/// Central finite differences of a scalar function of a matrix.
pub fn numeric_grad(x: &Mat, h: f64, mut f: impl FnMut(&Mat) -> f64) -> Mat {
    let mut g = Mat::zeros(x.dim());
    let mut xp = x.clone();
    for idx in ndarray::indices(x.dim()) {
        let orig = xp[idx];
        xp[idx] = orig + h;
        let up = f(&xp);
        xp[idx] = orig - h;
        let down = f(&xp);
        xp[idx] = orig;
        g[idx] = (up - down) / (2.0 * h);
    }
    g
}

/// `‖a - b‖ / (‖a‖ + ‖b‖)`, zero when both vanish.
pub fn rel_err(a: &Mat, b: &Mat) -> f64 {
    let diff = (a - b).mapv(|x| x * x).sum().sqrt();
    let scale = a.mapv(|x| x * x).sum().sqrt() + b.mapv(|x| x * x).sum().sqrt();
    if scale < 1e-12 {
        0.0
    } else {
        diff / scale
    }
}

pub fn random_mat(rows: usize, cols: usize, scale: f64, rng: &mut impl Rng) -> Mat {
    Mat::from_shape_simple_fn((rows, cols), || scale * rng.sample::<f64, _>(StandardNormal))
}

/// Three-sigma band for an empirical Bernoulli rate over `n` trials.
pub fn bernoulli_within_3sigma(hits: usize, n: usize, p: f64) -> bool {
    let sigma = (p * (1.0 - p) / n as f64).sqrt();
    ((hits as f64 / n as f64) - p).abs() <= 3.0 * sigma
}
