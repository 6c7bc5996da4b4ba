use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng::{stream, Domain};

/// Shape of a flow over `dim` complex values.
///
/// The noise vector is squeezed to an `M×2` array (row = receive antenna,
/// columns = real/imaginary) and stored flat as `[re0, im0, re1, im1, ...]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub k_steps: usize,
    pub dim: usize,
    /// Rows `0..partition_m` form the upper half of each coupling split.
    /// Must be 0 when `dim == 1`, where the split is real vs imaginary.
    pub partition_m: usize,
    pub hidden_width: usize,
    /// Fully-connected layers per coupling network.
    pub mlp_depth: usize,
    /// Coupling log-scales are `c·tanh(raw/c)` for `c = scale_clamp`;
    /// 0 uses the raw output.
    pub scale_clamp: f64,
}

impl FlowConfig {
    pub fn new(dim: usize) -> Self {
        Self {
            k_steps: 4,
            dim,
            partition_m: dim / 2,
            hidden_width: 8,
            mlp_depth: 3,
            scale_clamp: 5.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.k_steps == 0 || self.hidden_width == 0 || self.mlp_depth == 0 {
            return Err(Error::config(format!("degenerate flow config {self:?}")));
        }
        let split_ok = if self.dim == 1 {
            self.partition_m == 0
        } else {
            (1..self.dim).contains(&self.partition_m)
        };
        if !split_ok {
            return Err(Error::config(format!(
                "partition_m = {} invalid for dim {}",
                self.partition_m, self.dim
            )));
        }
        if !(self.scale_clamp >= 0.0 && self.scale_clamp.is_finite()) {
            return Err(Error::config(format!("bad scale_clamp {}", self.scale_clamp)));
        }
        Ok(())
    }

    /// Number of reals per sample, `2M`.
    pub fn flat_dim(&self) -> usize {
        2 * self.dim
    }

    /// Flat index where the upper half ends.
    pub fn split(&self) -> usize {
        if self.dim == 1 {
            1
        } else {
            2 * self.partition_m
        }
    }

    /// Actnorm, conv and two couplings per step.
    pub fn layer_count(&self) -> usize {
        4 * self.k_steps
    }

    /// (input, output) widths of the networks of coupling `c` (0 or 1).
    pub(crate) fn coupling_io(&self, c: usize) -> (usize, usize) {
        let (upper, lower) = (self.split(), self.flat_dim() - self.split());
        if c == 0 {
            (upper, lower)
        } else {
            (lower, upper)
        }
    }

    pub(crate) fn clamp(&self, raw: f64) -> f64 {
        if self.scale_clamp > 0.0 {
            self.scale_clamp * (raw / self.scale_clamp).tanh()
        } else {
            raw
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `out × in`.
    pub weight: Tensor,
    pub bias: Tensor,
}

/// ReLU between layers, none after the last.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    fn new<R: Rng>(input: usize, hidden: usize, output: usize, depth: usize, rng: &mut R) -> Self {
        let mut layers = Vec::with_capacity(depth);
        let mut fan_in = input;
        for l in 0..depth {
            let out = if l + 1 == depth { output } else { hidden };
            let weight = if l + 1 == depth {
                Tensor::zeros(&[out, fan_in])
            } else {
                let bound = 1.0 / (fan_in as f64).sqrt();
                let vals = (0..out * fan_in).map(|_| rng.random_range(-bound..bound)).collect();
                Tensor::new(vec![out, fan_in], vals).expect("shape matches")
            };
            layers.push(Dense {
                weight,
                bias: Tensor::zeros(&[out]),
            });
            fan_in = out;
        }
        Self { layers }
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].weight.cols()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weight.rows())
    }
}

/// Coupling `c = 0` rewrites the lower half from the upper one, `c = 1` the
/// upper half from the lower one.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    pub scale_net: Mlp,
    pub shift_net: Mlp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowStep {
    pub actnorm_scale: Tensor,
    pub actnorm_bias: Tensor,
    /// 2×2 mixing of the real/imaginary channels.
    pub conv: Tensor,
    pub couplings: [Coupling; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowParams {
    pub config: FlowConfig,
    pub steps: Vec<FlowStep>,
    pub latent_mean: Tensor,
    pub latent_logvar: Tensor,
    /// Set once the data-dependent actnorm initialisation has run.
    pub actnorm_initialized: bool,
}

impl FlowParams {
    /// Random rotations for the convs, small uniform hidden weights, zero
    /// final layers (every coupling starts as the identity), identity
    /// actnorm awaiting data-dependent initialisation.
    pub fn new(config: FlowConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream(seed, Domain::Init, 0, 0);
        let steps = (0..config.k_steps)
            .map(|_| {
                let theta = rng.random_range(0.0..2.0 * PI);
                let (s, c) = theta.sin_cos();
                let couplings = [0, 1].map(|ci| {
                    let (i, o) = config.coupling_io(ci);
                    Coupling {
                        scale_net: Mlp::new(i, config.hidden_width, o, config.mlp_depth, &mut rng),
                        shift_net: Mlp::new(i, config.hidden_width, o, config.mlp_depth, &mut rng),
                    }
                });
                FlowStep {
                    actnorm_scale: Tensor::filled(&[2], 1.0),
                    actnorm_bias: Tensor::zeros(&[2]),
                    conv: Tensor::from_rows(&[&[c, -s], &[s, c]]),
                    couplings,
                }
            })
            .collect();
        Ok(Self {
            config,
            steps,
            latent_mean: Tensor::zeros(&[config.flat_dim()]),
            latent_logvar: Tensor::zeros(&[config.flat_dim()]),
            actnorm_initialized: false,
        })
    }

    /// Every layer the identity and a standard normal latent: the log
    /// likelihood is that of `N(0, I)` on the squeezed input.
    pub fn identity(config: FlowConfig) -> Result<Self> {
        let mut p = Self::new(config, 0)?;
        for step in &mut p.steps {
            step.conv = Tensor::identity(2);
            for c in &mut step.couplings {
                for net in [&mut c.scale_net, &mut c.shift_net] {
                    for layer in &mut net.layers {
                        layer.weight.fill(0.0);
                    }
                }
            }
        }
        p.actnorm_initialized = true;
        Ok(p)
    }

    /// Parameter names, in the order of [`FlowParams::tensors`].
    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (k, step) in self.steps.iter().enumerate() {
            names.push(format!("step{k}.actnorm.scale"));
            names.push(format!("step{k}.actnorm.bias"));
            names.push(format!("step{k}.conv.weight"));
            for (c, coupling) in step.couplings.iter().enumerate() {
                for (net_name, net) in [("scale", &coupling.scale_net), ("shift", &coupling.shift_net)] {
                    for l in 0..net.layers.len() {
                        names.push(format!("step{k}.coupling{c}.{net_name}.{l}.weight"));
                        names.push(format!("step{k}.coupling{c}.{net_name}.{l}.bias"));
                    }
                }
            }
        }
        names.push("latent.mean".into());
        names.push("latent.logvar".into());
        names
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for step in &self.steps {
            out.extend([&step.actnorm_scale, &step.actnorm_bias, &step.conv]);
            for coupling in &step.couplings {
                for net in [&coupling.scale_net, &coupling.shift_net] {
                    for layer in &net.layers {
                        out.extend([&layer.weight, &layer.bias]);
                    }
                }
            }
        }
        out.extend([&self.latent_mean, &self.latent_logvar]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for step in &mut self.steps {
            out.push(&mut step.actnorm_scale);
            out.push(&mut step.actnorm_bias);
            out.push(&mut step.conv);
            for coupling in &mut step.couplings {
                for net in [&mut coupling.scale_net, &mut coupling.shift_net] {
                    for layer in &mut net.layers {
                        out.push(&mut layer.weight);
                        out.push(&mut layer.bias);
                    }
                }
            }
        }
        out.push(&mut self.latent_mean);
        out.push(&mut self.latent_logvar);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Rebuilds parameters from tensors listed in [`FlowParams::tensors`]
    /// order, checking every shape against `config`.
    pub fn from_tensors(config: FlowConfig, tensors: Vec<Tensor>, actnorm_initialized: bool) -> Result<Self> {
        let mut p = Self::new(config, 0)?;
        let expected = p.tensors().len();
        if tensors.len() != expected {
            return Err(Error::config(format!(
                "expected {expected} parameter tensors, got {}",
                tensors.len()
            )));
        }
        let names = p.tensor_names();
        for ((slot, t), name) in p.tensors_mut().into_iter().zip(tensors).zip(names) {
            if slot.shape() != t.shape() {
                return Err(Error::config(format!(
                    "{name}: shape {:?} does not match config ({:?})",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t;
        }
        p.actnorm_initialized = actnorm_initialized;
        Ok(p)
    }
}

/// Determinant of a 2×2 tensor.
pub(crate) fn det2(w: &Tensor) -> f64 {
    let v = w.values();
    v[0] * v[3] - v[1] * v[2]
}
