//! Sum-product GAMP on the real-valued model `ȳ = H̄x̄ + w̄` with a Gaussian
//! output channel and the binary prior `{±1/√2}` on each real dimension.

use std::f64::consts::FRAC_1_SQRT_2;

use crate::channel::{qpsk_slice, Frame};
use num_complex::Complex64;

pub const DAMPING: f64 = 0.7;
pub const TOLERANCE: f64 = 1e-8;
/// Floor on the per-real-dimension noise variance handed to GAMP.
pub const MIN_NOISE_VAR: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct GampOutput {
    /// Hard decisions, one constellation index per transmit antenna.
    pub x_hat: Vec<usize>,
    /// Soft estimates of `x̄` (length `2N`).
    pub x_soft: Vec<f64>,
    pub iterations_used: usize,
    /// Messages went non-finite and the matched filter was used instead.
    pub diverged: bool,
}

fn decide(x_soft: &[f64]) -> Vec<usize> {
    let n = x_soft.len() / 2;
    (0..n)
        .map(|i| qpsk_slice(Complex64::new(x_soft[i], x_soft[n + i])))
        .collect()
}

/// Runs at most `iterations` GAMP iterations; `noise_var` is the assumed
/// noise variance per real dimension (`σ²`). Damping is applied to both the
/// means and the variances of the output and input messages.
pub fn gamp(frame: &Frame, iterations: usize, noise_var: f64) -> GampOutput {
    let r = frame.realify();
    let (m, n) = (r.rows, r.cols);
    let h = &r.h;
    let h2: Vec<f64> = h.iter().map(|v| v * v).collect();
    let noise_var = noise_var.max(MIN_NOISE_VAR);
    let a = FRAC_1_SQRT_2;

    let mut x = vec![0.0; n];
    let mut vx = vec![a * a; n];
    let mut s = vec![0.0; m];
    let mut vp = vec![0.0; m];
    let mut p = vec![0.0; m];
    let mut vs = vec![0.0; m];
    let mut rhat = vec![0.0; n];
    let mut vr = vec![0.0; n];
    let mut used = 0;
    let mut finite = true;

    for t in 1..=iterations.max(1) {
        used = t;
        for i in 0..m {
            let row = &h[i * n..(i + 1) * n];
            let row2 = &h2[i * n..(i + 1) * n];
            vp[i] = row2.iter().zip(&vx).map(|(a, b)| a * b).sum();
            let hx: f64 = row.iter().zip(&x).map(|(a, b)| a * b).sum();
            p[i] = hx - vp[i] * s[i];
        }
        for i in 0..m {
            let denom = vp[i] + noise_var;
            let s_new = (r.y[i] - p[i]) / denom;
            s[i] = DAMPING * s_new + (1.0 - DAMPING) * s[i];
            vs[i] = if t == 1 { 1.0 / denom } else { DAMPING / denom + (1.0 - DAMPING) * vs[i] };
        }
        for j in 0..n {
            let mut prec = 0.0;
            let mut corr = 0.0;
            for i in 0..m {
                prec += h2[i * n + j] * vs[i];
                corr += h[i * n + j] * s[i];
            }
            vr[j] = 1.0 / prec;
            rhat[j] = x[j] + vr[j] * corr;
        }
        let mut change: f64 = 0.0;
        for j in 0..n {
            let mean = a * (a * rhat[j] / vr[j]).tanh();
            let x_new = DAMPING * mean + (1.0 - DAMPING) * x[j];
            change = change.max((x_new - x[j]).abs());
            x[j] = x_new;
            vx[j] = DAMPING * (a * a - mean * mean).max(1e-300) + (1.0 - DAMPING) * vx[j];
        }
        if !(x.iter().chain(&s).all(|v| v.is_finite())) {
            finite = false;
            break;
        }
        if change < TOLERANCE {
            break;
        }
    }

    if finite {
        return GampOutput {
            x_hat: decide(&x),
            x_soft: x,
            iterations_used: used,
            diverged: false,
        };
    }
    // matched filter H̄ᵀȳ
    let mf: Vec<f64> = (0..n)
        .map(|j| (0..m).map(|i| h[i * n + j] * r.y[i]).sum())
        .collect();
    GampOutput {
        x_hat: decide(&mf),
        x_soft: mf,
        iterations_used: used,
        diverged: true,
    }
}
