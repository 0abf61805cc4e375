//! Independent reference implementations used as test oracles. Nothing here
//! calls into the code under test except to read plain data.
#![allow(dead_code)]

use ctm_core::tensor::Matrix;

pub mod gen;

/// `|a - b| <= tol * max(1, |b|)`.
pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

/// Dense readout with `W = B A^T` materialized first, all in `f64`.
pub fn dense_readout(history: &Matrix, a: &Matrix, b: &Matrix, b0: &[f32]) -> Vec<f64> {
    let (d, m) = history.shape();
    let r = a.cols();
    let mut w = vec![vec![0.0f64; m]; d];
    for (i, row) in w.iter_mut().enumerate() {
        for (k, cell) in row.iter_mut().enumerate() {
            *cell = (0..r).map(|j| f64::from(b.get(i, j)) * f64::from(a.get(k, j))).sum();
        }
    }
    (0..d)
        .map(|i| {
            let acc: f64 = (0..m).map(|k| w[i][k] * f64::from(history.get(i, k))).sum();
            (f64::from(b0[i]) + acc).tanh()
        })
        .collect()
}

/// Per-tick scan `S <- decay * S + z[p] z[q]`.
pub fn scan_sync(sync: &[f32], states: &[Vec<f32>], pairs: &[(usize, usize)], decay: f64) -> Vec<f64> {
    let mut s: Vec<f64> = sync.iter().map(|&v| f64::from(v)).collect();
    for z in states {
        for (acc, &(p, q)) in s.iter_mut().zip(pairs) {
            *acc = decay * *acc + f64::from(z[p]) * f64::from(z[q]);
        }
    }
    s
}

/// `O(N^2)` DFT magnitudes.
pub fn naive_dft(x: &[f32]) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            let (mut re, mut im) = (0.0f64, 0.0f64);
            for (t, &v) in x.iter().enumerate() {
                let angle = -2.0 * std::f64::consts::PI * (k * t % n) as f64 / n as f64;
                re += f64::from(v) * angle.cos();
                im += f64::from(v) * angle.sin();
            }
            re.hypot(im)
        })
        .collect()
}

/// Projected gradient descent on `|tau - K s|^2` over the box.
pub fn projected_gradient(k: &Matrix, s: &[f32], lo: &[f64], hi: &[f64], step: f64, iters: usize) -> Vec<f64> {
    let target: Vec<f64> = (0..k.rows())
        .map(|i| (0..k.cols()).map(|j| f64::from(k.get(i, j)) * f64::from(s[j])).sum())
        .collect();
    let mut tau: Vec<f64> = lo.iter().zip(hi).map(|(l, h)| 0.5 * (l + h)).collect();
    for _ in 0..iters {
        for i in 0..tau.len() {
            let grad = 2.0 * (tau[i] - target[i]);
            tau[i] = (tau[i] - step * grad).clamp(lo[i], hi[i]);
        }
    }
    tau
}

/// `1 - H(softmax(x)) / ln C`, computed without max-shifting, for moderate inputs.
pub fn plain_certainty(x: &[f64]) -> f64 {
    let exps: Vec<f64> = x.iter().map(|v| v.exp()).collect();
    let z: f64 = exps.iter().sum();
    let h: f64 = exps.iter().map(|e| e / z).filter(|&p| p > 0.0).map(|p| -p * p.ln()).sum();
    1.0 - h / (x.len() as f64).ln()
}

/// Analytic velocity of the cubic blend `q0 + d (3t^2 - 2t^3)`.
pub fn hermite_velocity(q0: f64, q1: f64, t: f64) -> f64 {
    (q1 - q0) * (6.0 * t - 6.0 * t * t)
}

pub fn hermite_position(q0: f64, q1: f64, t: f64) -> f64 {
    q0 + (q1 - q0) * (3.0 * t * t - 2.0 * t * t * t)
}
