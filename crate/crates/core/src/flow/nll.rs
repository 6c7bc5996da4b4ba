//! The flow's mean negative log-likelihood as an autodiff graph.
//!
//! A batch of `B` samples is a `2M×B` tensor (row `2p + c` is channel `c`
//! of position `p`, one column per sample). Per-channel and per-row
//! parameters are broadcast over the batch by multiplying with a constant
//! row of ones.

use std::sync::Arc;

use super::params::FlowConfig;
use crate::autodiff::{Graph, NodeId, Op, Tensor};
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Packs `B` flat samples (back to back) into the `2M×B` batch layout.
pub fn batch_tensor(samples: &[f64], flat_dim: usize) -> Result<Tensor> {
    if flat_dim == 0 || samples.is_empty() || samples.len() % flat_dim != 0 {
        return Err(Error::contract(format!(
            "{} values do not form whole samples of width {flat_dim}",
            samples.len()
        )));
    }
    let b = samples.len() / flat_dim;
    let mut vals = vec![0.0; samples.len()];
    for (j, sample) in samples.chunks_exact(flat_dim).enumerate() {
        for (i, &v) in sample.iter().enumerate() {
            vals[i * b + j] = v;
        }
    }
    Tensor::matrix(flat_dim, b, vals)
}

struct Builder<'a> {
    g: &'a mut Graph,
    params: std::slice::Iter<'a, NodeId>,
    ones: NodeId,
}

impl Builder<'_> {
    fn next(&mut self) -> Result<NodeId> {
        self.params
            .next()
            .copied()
            .ok_or_else(|| Error::contract("too few parameter nodes for this flow config"))
    }

    /// `r×1` column repeated over the batch.
    fn broadcast(&mut self, col: NodeId) -> Result<NodeId> {
        self.g.matmul(col, self.ones)
    }

    fn mlp(&mut self, depth: usize, x: NodeId) -> Result<NodeId> {
        let mut h = x;
        for l in 0..depth {
            let (w, b) = (self.next()?, self.next()?);
            let z = self.g.matmul(w, h)?;
            let bb = self.broadcast(b)?;
            h = self.g.add(z, bb)?;
            if l + 1 < depth {
                h = self.g.relu(h)?;
            }
        }
        Ok(h)
    }
}

/// Adds the mean NLL (nats per sample) of `batch` to `g`.
///
/// `params` must hold one node per tensor, in [`super::FlowParams::tensors`]
/// order.
pub fn build_nll(g: &mut Graph, params: &[NodeId], config: &FlowConfig, batch: NodeId) -> Result<NodeId> {
    config.validate()?;
    let (n, m) = (config.flat_dim(), config.dim);
    let shape = g.value(batch).shape().to_vec();
    if shape.len() != 2 || shape[0] != n {
        return Err(Error::contract(format!("batch shape {shape:?}, expected [{n}, B]")));
    }
    let b = shape[1];
    let ones = g.constant(Tensor::filled(&[1, b], 1.0));
    // row 2p + c picks channel c
    let mut sel = Tensor::zeros(&[n, 2]);
    for r in 0..n {
        sel.set2(r, r % 2, 1.0);
    }
    let sel = g.constant(sel);
    let j = g.constant(Tensor::from_rows(&[&[0.0, 1.0], &[-1.0, 0.0]]));
    let split = config.split();

    let mut bld = Builder {
        g,
        params: params.iter(),
        ones,
    };
    let mut h = batch;
    // per-sample log-dets (identical across the batch) and batch-summed ones
    let mut per_sample_log_dets = Vec::new();
    let mut summed_log_dets = Vec::new();

    for _ in 0..config.k_steps {
        let (s, bias, w) = (bld.next()?, bld.next()?, bld.next()?);

        let s_rows = bld.g.matmul(sel, s)?;
        let s_full = bld.broadcast(s_rows)?;
        let b_rows = bld.g.matmul(sel, bias)?;
        let b_full = bld.broadcast(b_rows)?;
        let scaled = bld.g.mul(h, s_full)?;
        h = bld.g.add(scaled, b_full)?;
        let abs_s = bld.g.abs(s)?;
        let log_s = bld.g.log(abs_s)?;
        let sum_log_s = bld.g.sum(log_s)?;
        per_sample_log_dets.push(bld.g.scale(sum_log_s, m as f64)?);

        let mut parts = Vec::with_capacity(m);
        for p in 0..m {
            let rows = bld.g.slice_rows(h, 2 * p..2 * p + 2)?;
            parts.push(bld.g.matmul(w, rows)?);
        }
        h = bld.g.concat_rows(&parts)?;
        let r0 = bld.g.slice_rows(w, 0..1)?;
        let r1 = bld.g.slice_rows(w, 1..2)?;
        let r0j = bld.g.matmul(r0, j)?;
        let prod = bld.g.mul(r0j, r1)?;
        let det = bld.g.sum(prod)?;
        let abs_det = bld.g.abs(det)?;
        let log_det = bld.g.log(abs_det)?;
        per_sample_log_dets.push(bld.g.scale(log_det, m as f64)?);

        for c in 0..2 {
            let (cond_r, trans_r) = if c == 0 { (0..split, split..n) } else { (split..n, 0..split) };
            let cond = bld.g.slice_rows(h, cond_r)?;
            let trans = bld.g.slice_rows(h, trans_r)?;
            let raw = bld.mlp(config.mlp_depth, cond)?;
            let shift = bld.mlp(config.mlp_depth, cond)?;
            let a = if config.scale_clamp > 0.0 {
                let cl = config.scale_clamp;
                bld.g.apply(
                    Op::Map {
                        f: Arc::new(move |x| cl * (x / cl).tanh()),
                        df: Arc::new(move |x| {
                            let t = (x / cl).tanh();
                            1.0 - t * t
                        }),
                    },
                    &[raw],
                )?
            } else {
                raw
            };
            let e = bld.g.exp(a)?;
            let scaled = bld.g.mul(trans, e)?;
            let moved = bld.g.add(scaled, shift)?;
            h = if c == 0 {
                bld.g.concat_rows(&[cond, moved])?
            } else {
                bld.g.concat_rows(&[moved, cond])?
            };
            summed_log_dets.push(bld.g.sum(a)?);
        }
    }

    let (mu, logvar) = (bld.next()?, bld.next()?);
    if bld.params.next().is_some() {
        return Err(Error::contract("more parameter nodes than this flow config uses"));
    }
    let g = bld.g;
    let mu_full = g.matmul(mu, ones)?;
    let diff = g.sub(h, mu_full)?;
    let neg_lv = g.scale(logvar, -1.0)?;
    let inv_var = g.exp(neg_lv)?;
    let inv_full = g.matmul(inv_var, ones)?;
    let sq = g.mul(diff, diff)?;
    let weighted = g.mul(sq, inv_full)?;
    let quad = g.sum(weighted)?;
    let sum_lv = g.sum(logvar)?;

    let mut loss = g.scale(quad, 0.5 / b as f64)?;
    let half_lv = g.scale(sum_lv, 0.5)?;
    loss = g.add(loss, half_lv)?;
    let c = g.constant(Tensor::scalar(0.5 * n as f64 * LN_2PI));
    loss = g.add(loss, c)?;
    for ld in per_sample_log_dets {
        loss = g.sub(loss, ld)?;
    }
    for ld in summed_log_dets {
        let mean = g.scale(ld, 1.0 / b as f64)?;
        loss = g.sub(loss, mean)?;
    }
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradient_check;
    use crate::flow::infer::{FlowEvaluator, Scratch};
    use crate::flow::FlowParams;
    use approx::assert_abs_diff_eq;

    fn samples(count: usize, n: usize) -> Vec<f64> {
        (0..count * n).map(|i| ((i as f64 + 0.5) * 7.31).sin() * 1.7).collect()
    }

    fn perturbed(config: FlowConfig) -> FlowParams {
        let mut p = FlowParams::new(config, 11).unwrap();
        let mut t = 0.0f64;
        for tensor in p.tensors_mut() {
            for v in tensor.values_mut() {
                t += 1.0;
                *v += 0.2 * (t * 3.77).sin();
            }
        }
        p
    }

    #[test]
    fn graph_matches_plain_evaluation() {
        for dim in [1, 2, 4] {
            let config = FlowConfig::new(dim);
            let p = perturbed(config);
            let data = samples(6, config.flat_dim());
            let mut g = Graph::new();
            let ids: Vec<NodeId> = p.tensors().into_iter().map(|t| g.param(t.clone())).collect();
            let batch = g.constant(batch_tensor(&data, config.flat_dim()).unwrap());
            let loss = build_nll(&mut g, &ids, &config, batch).unwrap();
            let ev = FlowEvaluator::new(p).unwrap();
            let mut s = Scratch::default();
            let expected = -data
                .chunks_exact(config.flat_dim())
                .map(|x| ev.log_prob_flat(x, &mut s).unwrap())
                .sum::<f64>()
                / 6.0;
            assert_abs_diff_eq!(g.value(loss).values()[0], expected, epsilon = 1e-10);
        }
    }

    #[test]
    fn single_sample_loss_is_negative_log_prob() {
        let config = FlowConfig::new(2);
        let p = perturbed(config);
        let x = samples(1, 4);
        let mut g = Graph::new();
        let ids: Vec<NodeId> = p.tensors().into_iter().map(|t| g.param(t.clone())).collect();
        let batch = g.constant(batch_tensor(&x, 4).unwrap());
        let loss = build_nll(&mut g, &ids, &config, batch).unwrap();
        let lp = FlowEvaluator::new(p).unwrap().log_prob_flat(&x, &mut Scratch::default()).unwrap();
        assert_abs_diff_eq!(g.value(loss).values()[0], -lp, epsilon = 1e-12);
    }

    #[test]
    fn nll_gradients_match_finite_differences() {
        let mut config = FlowConfig::new(2);
        config.k_steps = 2;
        let p = perturbed(config);
        let data = samples(5, 4);
        let tensors: Vec<Tensor> = p.tensors().into_iter().cloned().collect();
        let report = gradient_check(
            &tensors,
            |g, ids| {
                let batch = g.constant(batch_tensor(&data, 4)?);
                build_nll(g, ids, &config, batch)
            },
            1e-6,
            1e-4,
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn wrong_parameter_count_rejected() {
        let config = FlowConfig::new(2);
        let p = FlowParams::new(config, 0).unwrap();
        let mut g = Graph::new();
        let mut ids: Vec<NodeId> = p.tensors().into_iter().map(|t| g.param(t.clone())).collect();
        ids.pop();
        let batch = g.constant(batch_tensor(&samples(2, 4), 4).unwrap());
        assert!(build_nll(&mut g, &ids, &config, batch).is_err());
    }
}
