//! Plain `f64` evaluation of a trained flow: log-likelihood, per-layer trace
//! and the analytic inverse. Training goes through the autodiff graph in
//! `nll.rs`; both paths compute the same function.

use num_complex::Complex64;

use super::params::{det2, Coupling, FlowConfig, FlowParams, FlowStep, Mlp};
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `[w0.re, w0.im, w1.re, w1.im, ...]`, i.e. the row-major `M×2` array.
pub fn squeeze(w: &[Complex64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * w.len());
    squeeze_into(w, &mut out);
    out
}

pub fn squeeze_into(w: &[Complex64], out: &mut Vec<f64>) {
    out.clear();
    for z in w {
        out.push(z.re);
        out.push(z.im);
    }
}

pub fn unsqueeze(h: &[f64]) -> Result<Vec<Complex64>> {
    if h.len() % 2 != 0 {
        return Err(Error::contract(format!("unsqueeze needs an even length, got {}", h.len())));
    }
    Ok(h.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect())
}

/// Per-call working memory.
#[derive(Debug, Default, Clone)]
pub struct Scratch {
    h: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
    raw: Vec<f64>,
    shift: Vec<f64>,
}

fn mlp_forward(net: &Mlp, input: &[f64], a: &mut Vec<f64>, b: &mut Vec<f64>, out: &mut Vec<f64>) {
    a.clear();
    a.extend_from_slice(input);
    let last = net.layers.len() - 1;
    for (l, layer) in net.layers.iter().enumerate() {
        let (rows, cols) = (layer.weight.rows(), layer.weight.cols());
        let w = layer.weight.values();
        b.clear();
        b.extend_from_slice(layer.bias.values());
        for (o, bo) in b.iter_mut().enumerate() {
            let row = &w[o * cols..(o + 1) * cols];
            let mut acc = *bo;
            for (wi, xi) in row.iter().zip(a.iter()) {
                acc += wi * xi;
            }
            *bo = if l < last && acc < 0.0 { 0.0 } else { acc };
        }
        debug_assert_eq!(b.len(), rows);
        std::mem::swap(a, b);
    }
    out.clear();
    out.extend_from_slice(a);
}

fn actnorm_apply(step: &FlowStep, h: &mut [f64]) {
    let (s, b) = (step.actnorm_scale.values(), step.actnorm_bias.values());
    for pair in h.chunks_exact_mut(2) {
        pair[0] = pair[0] * s[0] + b[0];
        pair[1] = pair[1] * s[1] + b[1];
    }
}

fn actnorm_invert(step: &FlowStep, h: &mut [f64]) {
    let (s, b) = (step.actnorm_scale.values(), step.actnorm_bias.values());
    for pair in h.chunks_exact_mut(2) {
        pair[0] = (pair[0] - b[0]) / s[0];
        pair[1] = (pair[1] - b[1]) / s[1];
    }
}

/// `M·Σ_c log|s_c|`.
pub fn actnorm_log_det(step: &FlowStep, m: usize) -> Result<f64> {
    let s = step.actnorm_scale.values();
    if s[0] == 0.0 || s[1] == 0.0 {
        return Err(Error::param("actnorm scale is zero"));
    }
    Ok(m as f64 * (s[0].abs().ln() + s[1].abs().ln()))
}

/// Each row `[re, im]` becomes `W·[re, im]ᵀ`.
fn conv_apply(w: &[f64], h: &mut [f64]) {
    for pair in h.chunks_exact_mut(2) {
        let (x0, x1) = (pair[0], pair[1]);
        pair[0] = w[0] * x0 + w[1] * x1;
        pair[1] = w[2] * x0 + w[3] * x1;
    }
}

fn inverse2(w: &[f64]) -> [f64; 4] {
    let d = w[0] * w[3] - w[1] * w[2];
    [w[3] / d, -w[1] / d, -w[2] / d, w[0] / d]
}

/// `M·log|det W|`.
pub fn conv_log_det(step: &FlowStep, m: usize) -> Result<f64> {
    let d = det2(&step.conv);
    if d == 0.0 || !d.is_finite() {
        return Err(Error::param(format!("1x1 conv weight is singular (det {d})")));
    }
    Ok(m as f64 * d.abs().ln())
}

/// Flat index ranges (conditioning, transformed) of coupling `c`.
fn coupling_ranges(config: &FlowConfig, c: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
    let (split, n) = (config.split(), config.flat_dim());
    if c == 0 {
        (0..split, split..n)
    } else {
        (split..n, 0..split)
    }
}

/// Applies coupling `c` in place and returns its log-determinant.
fn coupling_apply(config: &FlowConfig, coupling: &Coupling, c: usize, h: &mut [f64], s: &mut Scratch) -> f64 {
    let (cond, trans) = coupling_ranges(config, c);
    let Scratch { a, b, raw, shift, .. } = s;
    mlp_forward(&coupling.scale_net, &h[cond.clone()], a, b, raw);
    mlp_forward(&coupling.shift_net, &h[cond], a, b, shift);
    let mut log_det = 0.0;
    for ((x, &r), &t) in h[trans].iter_mut().zip(raw.iter()).zip(shift.iter()) {
        let la = config.clamp(r);
        *x = *x * la.exp() + t;
        log_det += la;
    }
    log_det
}

fn coupling_invert(config: &FlowConfig, coupling: &Coupling, c: usize, h: &mut [f64], s: &mut Scratch) {
    let (cond, trans) = coupling_ranges(config, c);
    let Scratch { a, b, raw, shift, .. } = s;
    mlp_forward(&coupling.scale_net, &h[cond.clone()], a, b, raw);
    mlp_forward(&coupling.shift_net, &h[cond], a, b, shift);
    for ((x, &r), &t) in h[trans].iter_mut().zip(raw.iter()).zip(shift.iter()) {
        *x = (*x - t) * (-config.clamp(r)).exp();
    }
}

/// Runs one full flow step in place (no log-dets); used by actnorm init.
fn step_apply(config: &FlowConfig, step: &FlowStep, h: &mut [f64], s: &mut Scratch) {
    actnorm_apply(step, h);
    conv_apply(step.conv.values(), h);
    coupling_apply(config, &step.couplings[0], 0, h, s);
    coupling_apply(config, &step.couplings[1], 1, h, s);
}

/// Data-dependent actnorm initialisation from the first mini-batch
/// (`batch` holds `B` flat samples back to back).
///
/// Step by step, each actnorm is set so that its output on the batch has
/// zero mean and unit variance per channel: `s_c = 1/std_c`,
/// `b_c = -mean_c/std_c`, with `std_c` floored at 1e-6. Runs once only.
pub fn initialize_actnorm(params: &mut FlowParams, batch: &[f64]) -> Result<()> {
    if params.actnorm_initialized {
        return Err(Error::contract("actnorm already initialised"));
    }
    let config = params.config;
    let n = config.flat_dim();
    if batch.is_empty() || batch.len() % n != 0 {
        return Err(Error::contract(format!("batch length {} is not a multiple of {n}", batch.len())));
    }
    let count = batch.len() / 2;
    if count < 2 {
        return Err(Error::contract("actnorm init needs B·M >= 2"));
    }
    let mut cur = batch.to_vec();
    let mut scratch = Scratch::default();
    for k in 0..config.k_steps {
        let mut mean = [0.0; 2];
        for pair in cur.chunks_exact(2) {
            mean[0] += pair[0];
            mean[1] += pair[1];
        }
        mean.iter_mut().for_each(|m| *m /= count as f64);
        let mut var = [0.0; 2];
        for pair in cur.chunks_exact(2) {
            var[0] += (pair[0] - mean[0]).powi(2);
            var[1] += (pair[1] - mean[1]).powi(2);
        }
        let step = &mut params.steps[k];
        for c in 0..2 {
            let std = (var[c] / count as f64).sqrt().max(1e-6);
            step.actnorm_scale.values_mut()[c] = 1.0 / std;
            step.actnorm_bias.values_mut()[c] = -mean[c] / std;
        }
        let step = &params.steps[k];
        for sample in cur.chunks_exact_mut(n) {
            step_apply(&config, step, sample, &mut scratch);
        }
    }
    params.actnorm_initialized = true;
    Ok(())
}

/// Activations and log-determinants of one evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowTrace {
    /// `h_0` (squeezed input) through `h_K` (latent), flat `M×2` each.
    pub activations: Vec<Vec<f64>>,
    /// One entry per layer: actnorm, conv, coupling 0, coupling 1 per step.
    pub log_dets: Vec<f64>,
    pub latent_log_prob: f64,
    pub log_likelihood: f64,
}

/// Immutable evaluator with per-step constants precomputed; cheap to share
/// across threads.
#[derive(Debug, Clone)]
pub struct FlowEvaluator {
    params: FlowParams,
    actnorm_log_dets: Vec<f64>,
    conv_log_dets: Vec<f64>,
    conv_inverses: Vec<[f64; 4]>,
    latent_inv_var: Vec<f64>,
    latent_const: f64,
}

impl FlowEvaluator {
    pub fn new(params: FlowParams) -> Result<Self> {
        params.config.validate()?;
        let m = params.config.dim;
        let actnorm_log_dets = params
            .steps
            .iter()
            .map(|s| actnorm_log_det(s, m))
            .collect::<Result<Vec<_>>>()?;
        let conv_log_dets = params
            .steps
            .iter()
            .map(|s| conv_log_det(s, m))
            .collect::<Result<Vec<_>>>()?;
        let conv_inverses = params.steps.iter().map(|s| inverse2(s.conv.values())).collect();
        let logvar = params.latent_logvar.values();
        if !params.latent_logvar.is_finite() || !params.latent_mean.is_finite() {
            return Err(Error::param("latent mean/log-variance not finite"));
        }
        let latent_inv_var = logvar.iter().map(|lv| (-lv).exp()).collect();
        let latent_const = -0.5 * logvar.iter().map(|lv| LN_2PI + lv).sum::<f64>();
        Ok(Self {
            params,
            actnorm_log_dets,
            conv_log_dets,
            conv_inverses,
            latent_inv_var,
            latent_const,
        })
    }

    pub fn params(&self) -> &FlowParams {
        &self.params
    }

    pub fn config(&self) -> &FlowConfig {
        &self.params.config
    }

    fn latent_log_prob(&self, z: &[f64]) -> f64 {
        let mu = self.params.latent_mean.values();
        let quad: f64 = z
            .iter()
            .zip(mu)
            .zip(&self.latent_inv_var)
            .map(|((z, m), iv)| (z - m) * (z - m) * iv)
            .sum();
        self.latent_const - 0.5 * quad
    }

    fn check_len(&self, h: &[f64]) -> Result<()> {
        if h.len() != self.params.config.flat_dim() {
            return Err(Error::config(format!(
                "flow expects {} reals, got {}",
                self.params.config.flat_dim(),
                h.len()
            )));
        }
        Ok(())
    }

    /// Log-likelihood of one squeezed sample.
    pub fn log_prob_flat(&self, h0: &[f64], s: &mut Scratch) -> Result<f64> {
        self.check_len(h0)?;
        let config = &self.params.config;
        let mut h = std::mem::take(&mut s.h);
        h.clear();
        h.extend_from_slice(h0);
        let mut total = 0.0;
        for (k, step) in self.params.steps.iter().enumerate() {
            actnorm_apply(step, &mut h);
            conv_apply(step.conv.values(), &mut h);
            total += self.actnorm_log_dets[k] + self.conv_log_dets[k];
            total += coupling_apply(config, &step.couplings[0], 0, &mut h, s);
            total += coupling_apply(config, &step.couplings[1], 1, &mut h, s);
        }
        total += self.latent_log_prob(&h);
        s.h = h;
        if total.is_finite() {
            Ok(total)
        } else {
            // rerun with per-layer checks to name the culprit
            self.trace_flat(h0)?;
            Err(Error::Numeric {
                message: "latent log-probability is not finite".into(),
                layer: Some(config.layer_count()),
            })
        }
    }

    pub fn log_prob(&self, w: &[Complex64]) -> Result<f64> {
        self.log_prob_flat(&squeeze(w), &mut Scratch::default())
    }

    /// Like [`FlowEvaluator::log_prob_flat`] but keeps every activation and
    /// log-det; non-finite values are reported with their layer index.
    pub fn trace_flat(&self, h0: &[f64]) -> Result<FlowTrace> {
        self.check_len(h0)?;
        let config = &self.params.config;
        let mut s = Scratch::default();
        let mut h = h0.to_vec();
        let mut activations = vec![h.clone()];
        let mut log_dets = Vec::with_capacity(config.layer_count());
        let check = |h: &[f64], ld: f64, layer: usize| -> Result<()> {
            if h.iter().all(|v| v.is_finite()) && ld.is_finite() {
                Ok(())
            } else {
                Err(Error::Numeric {
                    message: "non-finite activation".into(),
                    layer: Some(layer),
                })
            }
        };
        for (k, step) in self.params.steps.iter().enumerate() {
            actnorm_apply(step, &mut h);
            check(&h, self.actnorm_log_dets[k], 4 * k)?;
            log_dets.push(self.actnorm_log_dets[k]);
            conv_apply(step.conv.values(), &mut h);
            check(&h, self.conv_log_dets[k], 4 * k + 1)?;
            log_dets.push(self.conv_log_dets[k]);
            for c in 0..2 {
                let ld = coupling_apply(config, &step.couplings[c], c, &mut h, &mut s);
                check(&h, ld, 4 * k + 2 + c)?;
                log_dets.push(ld);
            }
            activations.push(h.clone());
        }
        let latent_log_prob = self.latent_log_prob(&h);
        if !latent_log_prob.is_finite() {
            return Err(Error::Numeric {
                message: "latent log-probability is not finite".into(),
                layer: Some(config.layer_count()),
            });
        }
        let log_likelihood = latent_log_prob + log_dets.iter().sum::<f64>();
        Ok(FlowTrace {
            activations,
            log_dets,
            latent_log_prob,
            log_likelihood,
        })
    }

    pub fn trace(&self, w: &[Complex64]) -> Result<FlowTrace> {
        self.trace_flat(&squeeze(w))
    }

    /// Maps a latent `z` back to input space, layer by layer in reverse.
    pub fn inverse_flat(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_len(z)?;
        let config = &self.params.config;
        let mut s = Scratch::default();
        let mut h = z.to_vec();
        for (k, step) in self.params.steps.iter().enumerate().rev() {
            coupling_invert(config, &step.couplings[1], 1, &mut h, &mut s);
            coupling_invert(config, &step.couplings[0], 0, &mut h, &mut s);
            conv_apply(&self.conv_inverses[k], &mut h);
            actnorm_invert(step, &mut h);
        }
        if !h.iter().all(|v| v.is_finite()) {
            return Err(Error::numeric("inverse produced non-finite values"));
        }
        Ok(h)
    }
}

/// Log-likelihood of `w` under the flow together with its trace.
pub fn flow_logprob(params: &FlowParams, w: &[Complex64]) -> Result<(f64, FlowTrace)> {
    let trace = FlowEvaluator::new(params.clone())?.trace(w)?;
    Ok((trace.log_likelihood, trace))
}

/// Single-layer views used by tests and diagnostics. Each returns the
/// transformed flat sample and the layer's log-determinant.
pub mod layers {
    use super::*;

    pub fn actnorm(params: &FlowParams, k: usize, h: &[f64]) -> Result<(Vec<f64>, f64)> {
        let step = &params.steps[k];
        let ld = actnorm_log_det(step, params.config.dim)?;
        let mut out = h.to_vec();
        actnorm_apply(step, &mut out);
        Ok((out, ld))
    }

    pub fn conv(params: &FlowParams, k: usize, h: &[f64]) -> Result<(Vec<f64>, f64)> {
        let step = &params.steps[k];
        let ld = conv_log_det(step, params.config.dim)?;
        let mut out = h.to_vec();
        conv_apply(step.conv.values(), &mut out);
        Ok((out, ld))
    }

    pub fn coupling(params: &FlowParams, k: usize, c: usize, h: &[f64]) -> (Vec<f64>, f64) {
        let mut out = h.to_vec();
        let ld = coupling_apply(
            &params.config,
            &params.steps[k].couplings[c],
            c,
            &mut out,
            &mut Scratch::default(),
        );
        (out, ld)
    }

    pub fn coupling_inverse(params: &FlowParams, k: usize, c: usize, h: &[f64]) -> Vec<f64> {
        let mut out = h.to_vec();
        coupling_invert(
            &params.config,
            &params.steps[k].couplings[c],
            c,
            &mut out,
            &mut Scratch::default(),
        );
        out
    }
}
