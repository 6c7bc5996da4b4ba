#![allow(dead_code)]

use flowdet::flow::{FlowConfig, FlowEvaluator, FlowParams};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Freshly initialized parameters with every entry jittered by
/// `N(0, scale²)`, so couplings and actnorm are far from the identity.
pub fn random_flow(config: FlowConfig, seed: u64, scale: f64) -> FlowParams {
    let mut p = FlowParams::new(config, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5);
    for t in p.tensors_mut() {
        for v in t.values_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v += scale * z;
        }
    }
    p.actnorm_initialized = true;
    p
}

pub fn random_input(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// `log|det ∂h_K/∂h_0|` from a central-difference Jacobian.
pub fn numeric_log_det(ev: &FlowEvaluator, h0: &[f64], step: f64) -> f64 {
    let n = h0.len();
    let forward = |h: &[f64]| ev.trace_flat(h).unwrap().activations.last().unwrap().clone();
    let mut jac = DMatrix::zeros(n, n);
    let mut x = h0.to_vec();
    for j in 0..n {
        x[j] = h0[j] + step;
        let plus = forward(&x);
        x[j] = h0[j] - step;
        let minus = forward(&x);
        x[j] = h0[j];
        for i in 0..n {
            jac[(i, j)] = (plus[i] - minus[i]) / (2.0 * step);
        }
    }
    jac.determinant().abs().ln()
}

/// Sum of the per-layer log-determinants reported by the flow.
pub fn analytic_log_det(ev: &FlowEvaluator, h0: &[f64]) -> f64 {
    ev.trace_flat(h0).unwrap().log_dets.iter().sum()
}
