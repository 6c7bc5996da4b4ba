use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::infer::{initialize_actnorm, squeeze_into, FlowEvaluator, Scratch};
use super::nll::{batch_tensor, build_nll};
use super::params::{det2, FlowConfig, FlowParams};
use crate::autodiff::{adam_step, AdamConfig, AdamState, Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::noise::NoiseBatch;
use crate::rng::{stream, Domain};

/// Smallest `|det W|` an update may leave behind.
pub const MIN_CONV_DET: f64 = 1e-8;
const MAX_HALVINGS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Trailing share of the dataset kept out of training for per-epoch NLL.
    pub holdout_fraction: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            batch_size: 1024,
            epochs: 30,
            learning_rate: 1e-3,
            seed: 0,
            holdout_fraction: 0.1,
        }
    }
}

/// Per-epoch record of a training run. NLLs are nats per sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    /// Held-out NLL right after actnorm initialisation.
    pub initial_holdout_nll: f64,
    pub holdout_nll: Vec<f64>,
    /// Mean mini-batch loss over each epoch.
    pub train_nll: Vec<f64>,
    pub steps: u64,
    /// Updates redone at a smaller step because a conv turned singular.
    pub det_guard_retries: u64,
    pub train_samples: usize,
    pub holdout_samples: usize,
}

impl TrainingLog {
    pub fn final_holdout_nll(&self) -> f64 {
        self.holdout_nll.last().copied().unwrap_or(self.initial_holdout_nll)
    }
}

/// Mean negative log-likelihood (nats per sample) of flat samples.
pub fn mean_nll(evaluator: &FlowEvaluator, flat: &[f64]) -> Result<f64> {
    let n = evaluator.config().flat_dim();
    let count = flat.len() / n;
    if count == 0 {
        return Err(Error::contract("no samples"));
    }
    // fixed chunking, then an in-order sum: independent of thread count
    let partial: Vec<f64> = flat
        .par_chunks(n * 256)
        .map(|chunk| {
            let mut s = Scratch::default();
            chunk
                .chunks_exact(n)
                .map(|x| evaluator.log_prob_flat(x, &mut s))
                .sum::<Result<f64>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(-partial.iter().sum::<f64>() / count as f64)
}

fn flatten(dataset: &NoiseBatch) -> Vec<f64> {
    let mut flat = Vec::with_capacity(2 * dataset.samples.len());
    let mut row = Vec::new();
    for w in dataset.rows() {
        squeeze_into(w, &mut row);
        flat.extend_from_slice(&row);
    }
    flat
}

pub fn train(config: FlowConfig, dataset: &NoiseBatch, opts: &TrainOptions) -> Result<(FlowParams, TrainingLog)> {
    if dataset.dim != config.dim {
        return Err(Error::config(format!(
            "dataset has dimension {} but the flow expects {}",
            dataset.dim, config.dim
        )));
    }
    train_flat(config, &flatten(dataset), opts)
}

/// Trains on flat squeezed samples stored back to back.
pub fn train_flat(config: FlowConfig, data: &[f64], opts: &TrainOptions) -> Result<(FlowParams, TrainingLog)> {
    config.validate()?;
    let n = config.flat_dim();
    if data.is_empty() || data.len() % n != 0 {
        return Err(Error::config(format!("training data is not a whole number of {n}-wide samples")));
    }
    if opts.batch_size == 0 || !(0.0..1.0).contains(&opts.holdout_fraction) {
        return Err(Error::config(format!("bad training options {opts:?}")));
    }
    let count = data.len() / n;
    let mut holdout = (count as f64 * opts.holdout_fraction).floor() as usize;
    if opts.holdout_fraction > 0.0 && holdout == 0 && count > 1 {
        holdout = 1;
    }
    let n_train = count - holdout;
    if n_train == 0 {
        return Err(Error::config("no training samples left after the holdout split"));
    }
    let (train_data, holdout_data) = data.split_at(n_train * n);

    let mut params = FlowParams::new(config, opts.seed)?;
    let mut order: Vec<usize> = (0..n_train).collect();
    let shuffle = |order: &mut Vec<usize>, epoch: usize| {
        order.sort_unstable();
        order.shuffle(&mut stream(opts.seed, Domain::Shuffle, 0, epoch as u64));
    };
    shuffle(&mut order, 0);

    let gather = |idx: &[usize]| -> Vec<f64> {
        let mut out = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            out.extend_from_slice(&train_data[i * n..(i + 1) * n]);
        }
        out
    };
    let first = gather(&order[..opts.batch_size.min(n_train)]);
    initialize_actnorm(&mut params, &first)?;

    let eval_set = if holdout > 0 { holdout_data } else { train_data };
    let initial = mean_nll(&FlowEvaluator::new(params.clone())?, eval_set)?;
    let mut log = TrainingLog {
        initial_holdout_nll: initial,
        holdout_nll: Vec::with_capacity(opts.epochs),
        train_nll: Vec::with_capacity(opts.epochs),
        steps: 0,
        det_guard_retries: 0,
        train_samples: n_train,
        holdout_samples: holdout,
    };

    let adam_config = AdamConfig::with_learning_rate(opts.learning_rate);
    let mut state = AdamState::new(adam_config, params.tensors());
    let mut bad_epochs = 0;

    for epoch in 0..opts.epochs {
        if epoch > 0 {
            shuffle(&mut order, epoch);
        }
        let mut loss_sum = 0.0;
        for idx in order.chunks(opts.batch_size) {
            let batch = batch_tensor(&gather(idx), n)?;
            let (loss, mut grads) = loss_and_grads(&params, batch).map_err(|e| {
                Error::Divergence(format!("epoch {epoch}, step {}: {e}", log.steps))
            })?;
            guarded_update(&mut params, &mut grads, &mut state, &mut log)?;
            loss_sum += loss * idx.len() as f64;
            log.steps += 1;
        }
        log.train_nll.push(loss_sum / n_train as f64);

        let nll = mean_nll(&FlowEvaluator::new(params.clone())?, eval_set)
            .map_err(|e| Error::Divergence(format!("epoch {epoch}: held-out evaluation failed: {e}")))?;
        log.holdout_nll.push(nll);
        if nll > initial + 10.0 * initial.abs().max(1.0) {
            bad_epochs += 1;
            if bad_epochs >= 3 {
                return Err(Error::Divergence(format!(
                    "held-out NLL {nll:.4} after epoch {epoch} vs {initial:.4} at init \
                     for 3 consecutive epochs; history {:?}",
                    log.holdout_nll
                )));
            }
        } else {
            bad_epochs = 0;
        }
        log::debug!("epoch {epoch}: train {:.5} held-out {nll:.5}", log.train_nll[epoch]);
    }
    Ok((params, log))
}

fn loss_and_grads(params: &FlowParams, batch: Tensor) -> Result<(f64, Vec<Tensor>)> {
    let mut g = Graph::new();
    let ids: Vec<NodeId> = params.tensors().into_iter().map(|t| g.param(t.clone())).collect();
    let batch = g.constant(batch);
    let loss = build_nll(&mut g, &ids, &params.config, batch)?;
    g.backward(loss)?;
    let grads = ids.iter().map(|&id| g.grad(id)).collect();
    Ok((g.value(loss).values()[0], grads))
}

/// Adam step that is undone and retried at half the step size while any
/// conv weight would become (near) singular.
fn guarded_update(
    params: &mut FlowParams,
    grads: &mut [Tensor],
    state: &mut AdamState,
    log: &mut TrainingLog,
) -> Result<()> {
    let saved_params: Vec<Tensor> = params.tensors().into_iter().cloned().collect();
    let saved_state = state.clone();
    let base_lr = state.config.learning_rate;
    let mut lr = base_lr;
    for _ in 0..=MAX_HALVINGS {
        let mut g = grads.to_vec();
        state.config.learning_rate = lr;
        adam_step(&mut params.tensors_mut(), &mut g, state)?;
        if params.steps.iter().all(|s| det2(&s.conv).abs() >= MIN_CONV_DET) {
            state.config.learning_rate = base_lr;
            grads.iter_mut().for_each(|t| t.values_mut().fill(0.0));
            return Ok(());
        }
        for (slot, saved) in params.tensors_mut().into_iter().zip(&saved_params) {
            slot.clone_from(saved);
        }
        *state = saved_state.clone();
        log.det_guard_retries += 1;
        lr *= 0.5;
    }
    Err(Error::Divergence(format!(
        "conv weight stays singular after {MAX_HALVINGS} step halvings"
    )))
}
